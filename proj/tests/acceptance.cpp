// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "safe_mpc/cost_classifier.hpp"
#include "safe_mpc/dynamics_ensemble.hpp"
#include "safe_mpc/harness.hpp"
#include "safe_mpc/mlp.hpp"
#include "safe_mpc/planner.hpp"
#include "safe_mpc/rng.hpp"

using namespace safe_mpc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// Desk-scale model and planner sizes; step counts stay at the criterion values.
KeyValues desk_overrides() {
    return {{"dynamics.hidden", "32,32"},
            {"planner.n_samples", "200"},
            {"planner.max_iters", "5"},
            {"planner.random_n_samples", "1000"},
            {"classifier.n_estimators", "100"}};
}

const fs::path kRoot = "acceptance_runs";

SummaryTable run_methods(const fs::path& out, const std::vector<Method>& methods, const KeyValues& extra) {
    ExperimentSpec spec;
    spec.task = TaskPreset::point_goal1;
    spec.seeds = {0, 1, 2};
    spec.out = out;
    spec.jobs = jobs();
    spec.overrides = desk_overrides();
    spec.overrides.insert(spec.overrides.end(), extra.begin(), extra.end());
    fs::remove_all(out);
    for (Method m : methods) {
        spec.method = m;
        run_experiment(spec);
    }
    return compare_runs({out});
}

const SummaryTable& main_table() {
    static const SummaryTable table =
        run_methods(kRoot / "violations", {Method::mpc_rce, Method::mpc_cem, Method::mpc_random}, {});
    return table;
}

Verdict violation_ordering() {
    const auto t0 = std::chrono::steady_clock::now();
    const SummaryTable& t = main_table();
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    const double rce = t.find("point_goal1", "mpc_rce")->total_violations_mean;
    const double cem = t.find("point_goal1", "mpc_cem")->total_violations_mean;
    const double rnd = t.find("point_goal1", "mpc_random")->total_violations_mean;
    const bool ok = rce < cem && rce < rnd && rce <= 0.5 * cem;
    return {ok, fmt("mean total violations rce=%.2f cem=%.2f random=%.2f (need rce<=%.2f)", rce, cem, rnd, 0.5 * cem) +
                    fmt(", %.1f min on %.0f threads", minutes, jobs())};
}

Verdict task_competence() {
    const double rce = main_table().find("point_goal1", "mpc_rce")->reward_mean;
    const SummaryTable free = run_methods(kRoot / "unconstrained", {Method::mpc_cem}, {{"planner.penalty", "0"}});
    const double cem = free.find("point_goal1", "mpc_cem")->reward_mean;
    return {rce >= 0.7 * cem, fmt("converged reward rce=%.3f cem(lambda=0)=%.3f ratio=%.3f", rce, cem, rce / cem)};
}

PlannerConfig toy_config(PlannerMode mode) {
    PlannerConfig c;
    c.mode = mode;
    c.horizon = 1;
    c.action_dim = 1;
    return c;
}

std::vector<CandidateEvaluation> toy_evaluate(const Eigen::MatrixXd& seqs) {
    std::vector<CandidateEvaluation> out;
    for (Eigen::Index i = 0; i < seqs.cols(); ++i) {
        const double x = seqs(0, i);
        out.push_back({-(x - 0.8) * (x - 0.8), x <= 0.5 ? 0.0 : 1.0});
    }
    return out;
}

Verdict optimizer_oracle() {
    double best_x = 0.0, best = -1e300;
    for (int i = 0; i <= 2000; ++i) {
        const double x = -1.0 + 1e-3 * i;
        if (x <= 0.5 && -(x - 0.8) * (x - 0.8) > best) {
            best = -(x - 0.8) * (x - 0.8);
            best_x = x;
        }
    }
    const auto timed = [](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        const SolveResult r = fn();
        return std::pair{r, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    };
    const PlannerConfig rc = toy_config(PlannerMode::rce), cc = toy_config(PlannerMode::cem_penalty);
    const auto [rce, rce_s] = timed([&] { return rce_solve(rc, cold_start(rc), toy_evaluate, 0); });
    const auto [cem, cem_s] = timed([&] { return cem_penalty_solve(cc, cold_start(cc), toy_evaluate, 0); });
    const double er = std::abs(rce.sequence[0] - best_x), ec = std::abs(cem.sequence[0] - best_x);
    const bool ok = er <= 0.05 && ec <= 0.1 && rce_s < 1.0 && cem_s < 1.0;
    return {ok, fmt("grid optimum %.3f, rce error %.4f, cem error %.4f", best_x, er, ec) +
                    fmt(", times %.4fs %.4fs", rce_s, cem_s)};
}

Verdict elite_property() {
    const int n = 100, k = 12, q = 5;
    Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::set<int> feasible(idx.begin(), idx.begin() + q);
    std::vector<CandidateEvaluation> evals;
    for (int i = 0; i < n; ++i) {
        if (feasible.count(i)) evals.push_back({u(rng), 0.0});
        else evals.push_back({10.0 + u(rng), 0.4 * u(rng) + 1e-3});
    }
    int rce_bad = 0, cem_bad = 0;
    const auto rce = select_elites_rce(evals, k);
    const auto cem = select_elites_penalty(evals, k, 1e4);
    for (int i : rce) rce_bad += !evals[i].feasible();
    for (int i : cem) cem_bad += !evals[i].feasible();
    return {rce_bad == 0 && cem_bad >= 1,
            fmt("q=%.0f k=%.0f: rce elites infeasible=%.0f, penalty elites infeasible=%.0f", q, k, rce_bad, cem_bad)};
}

struct DriftMembers : MemberDynamics {
    int ensemble_size() const override { return 2; }
    Eigen::MatrixXd predict_member_batch(int member, const Eigen::MatrixXd& states,
                                         const Eigen::MatrixXd&) const override {
        return states.array() + (member == 0 ? 1.0 : -1.0);
    }
};

struct NegativeIsUnsafe : CostIndicator {
    void predict_batch(const Eigen::MatrixXd& states, std::vector<std::uint8_t>& labels) const override {
        labels.resize(static_cast<std::size_t>(states.cols()));
        for (Eigen::Index i = 0; i < states.cols(); ++i) labels[i] = states(0, i) < 0.0;
    }
};

Verdict trajectory_oracle() {
    const StateReward next_value = [](const Eigen::Ref<const Eigen::VectorXd>&,
                                      const Eigen::Ref<const Eigen::VectorXd>& n) { return n[0]; };
    Eigen::VectorXd s0 = Eigen::VectorXd::Zero(1), seq(2);
    seq << 0.7, -0.2;
    const auto e = evaluate_trajectory(DriftMembers{}, NegativeIsUnsafe{}, next_value, s0, seq, 1, 0.98, 0.4);
    return {std::abs(e.reward) <= 1e-12 && std::abs(e.cost - 1.4) <= 1e-12,
            fmt("reward=%.17g cost=%.17g (expected 0 and 1.4)", e.reward, e.cost)};
}

Verdict gradient_check_probe() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        MlpRegressor net(2, {4}, 2, rng);
        for (auto& l : net.layers()) l.bias.setConstant(0.1);
        std::normal_distribution<double> n(0.0, 1.0);
        Eigen::VectorXd x(2), y(2);
        x << n(rng), n(rng);
        y << n(rng), n(rng);
        worst = std::max(worst, gradient_check(net, x, y, seed));
    }
    return {worst < 1e-4, fmt("max relative error %.3e over 5 probe networks", worst)};
}

std::vector<Transition> linear_data(int n, std::uint64_t seed, double shift) {
    Rng rng(seed);
    std::normal_distribution<double> s(shift, 1.0);
    std::uniform_real_distribution<double> a(-1.0, 1.0);
    std::vector<Transition> out;
    for (int i = 0; i < n; ++i) {
        Transition t;
        t.observation = Eigen::Vector2d(s(rng), s(rng));
        t.action = Eigen::Vector2d(a(rng), a(rng));
        t.next_observation = t.observation + 0.1 * t.action;
        out.push_back(t);
    }
    return out;
}

Verdict ensemble_uncertainty() {
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 64;
    EnsembleDynamicsModel model(2, 2, 5, {32, 32}, 15);
    model.fit(linear_data(2000, 14, 0.0), tc, 16);
    const auto held_in = linear_data(100, 17, 0.0);
    const auto far = linear_data(100, 17, 10.0);
    double in = 0.0, out = 0.0;
    for (int i = 0; i < 100; ++i) {
        in += model.predict_distribution(held_in[i].observation, held_in[i].action).second.mean() / 100.0;
        out += model.predict_distribution(far[i].observation, far[i].action).second.mean() / 100.0;
    }
    EnsembleDynamicsModel cloned = model;
    for (int b = 1; b < cloned.ensemble_size(); ++b) cloned.members()[b] = cloned.members()[0];
    double clone_max = 0.0;
    for (const auto& t : far) clone_max = std::max(clone_max, cloned.predict_distribution(t.observation, t.action).second.maxCoeff());
    return {in < out && clone_max == 0.0,
            fmt("mean variance held-in %.3e, shifted %.3e, cloned max %.1e", in, out, clone_max)};
}

Verdict classifier_imbalance() {
    const auto rare = [](int n, std::uint64_t seed) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 3.0), in(-0.45, 0.45);
        std::bernoulli_distribution unsafe(0.05);
        const Eigen::Vector2d c(1.0, 1.0);
        std::pair<Eigen::MatrixXd, std::vector<std::uint8_t>> d{Eigen::MatrixXd(2, n), {}};
        for (int i = 0; i < n; ++i) {
            Eigen::Vector2d p;
            if (unsafe(rng)) {
                do p << 1.0 + in(rng), 1.0 + in(rng);
                while ((p - c).norm() > 0.45);
            } else {
                do p << u(rng), u(rng);
                while ((p - c).norm() < 0.55);
            }
            d.first.col(i) = p;
            d.second.push_back((p - c).norm() < 0.5);
        }
        return d;
    };
    const auto train = rare(4000, 4), test = rare(4000, 5);
    DualBuffer buf(3.0);
    for (int i = 0; i < train.first.cols(); ++i) buf.ingest(train.first.col(i), train.second[i]);
    const GbdtModel m = fit_classifier(GbdtConfig{}, buf, 6);
    int unsafe = 0, hit = 0;
    for (int i = 0; i < test.first.cols(); ++i) {
        if (!test.second[i]) continue;
        ++unsafe;
        hit += m.predict(test.first.col(i));
    }
    const double recall = static_cast<double>(hit) / std::max(unsafe, 1);

    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    Eigen::MatrixXd x(2, 1000);
    std::vector<std::uint8_t> y;
    for (int i = 0; i < 1000; ++i) {
        x(0, i) = u(rng);
        x(1, i) = u(rng);
        y.push_back((static_cast<int>(x(0, i)) + static_cast<int>(x(1, i))) % 2);
    }
    const GbdtModel board = fit_gbdt(GbdtConfig{}, x, y);
    int correct = 0;
    for (int i = 0; i < 1000; ++i) correct += board.predict(x.col(i)) == y[i];
    return {recall >= 0.9 && correct == 1000,
            fmt("unsafe recall %.3f over %.0f held-out, checkerboard accuracy %.0f/1000", recall, unsafe, correct)};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Verdict determinism() {
    ExperimentSpec spec;
    spec.task = TaskPreset::point_goal1;
    spec.method = Method::mpc_rce;
    spec.seeds = {7};
    spec.jobs = 1;
    spec.overrides = desk_overrides();
    spec.overrides.insert(spec.overrides.end(), {{"agent.init_random_steps", "1000"}, {"agent.total_steps", "800"}});
    std::string body[2];
    for (int i = 0; i < 2; ++i) {
        spec.out = kRoot / ("determinism_" + std::to_string(i));
        fs::remove_all(spec.out);
        run_experiment(spec);
        body[i] = slurp(spec.out / "runs" / (run_id(spec.task, spec.method, 7) + ".csv"));
    }
    const bool ok = !body[0].empty() && body[0] == body[1];
    return {ok, fmt("two runs, %.0f bytes each, identical=%.0f", static_cast<double>(body[0].size()), ok)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"violation ordering", violation_ordering},
        {"task competence", task_competence},
        {"optimizer oracle", optimizer_oracle},
        {"elite property", elite_property},
        {"trajectory oracle", trajectory_oracle},
        {"gradient check", gradient_check_probe},
        {"ensemble uncertainty", ensemble_uncertainty},
        {"classifier imbalance", classifier_imbalance},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("criterion %zu %-22s %s  %s\n", i + 1, criteria[i].first.c_str(), v.pass ? "PASS" : "FAIL",
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
