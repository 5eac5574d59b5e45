#include "safe_mpc/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "safe_mpc/errors.hpp"

namespace safe_mpc {

std::string to_string(PlannerMode mode) {
    switch (mode) {
        case PlannerMode::rce: return "rce";
        case PlannerMode::cem_penalty: return "cem_penalty";
        case PlannerMode::random: return "random";
    }
    return "unknown";
}

PlannerMode planner_mode_from_string(const std::string& name) {
    if (name == "rce") return PlannerMode::rce;
    if (name == "cem_penalty" || name == "cem") return PlannerMode::cem_penalty;
    if (name == "random") return PlannerMode::random;
    throw ConfigError("unknown planner mode '" + name + "'");
}

void PlannerConfig::validate() const {
    if (n_samples < 1) throw ConfigError("planner n_samples must be at least 1");
    if (n_elites < 1 || n_elites > n_samples) throw ConfigError("planner n_elites must lie in [1, n_samples]");
    if (horizon < 1) throw ConfigError("planner horizon must be at least 1");
    if (action_dim < 1) throw ConfigError("planner action_dim must be at least 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("planner gamma must lie in (0, 1]");
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("planner beta must lie in (0, 1]");
    if (penalty < 0.0) throw ConfigError("planner penalty must be non-negative");
    if (max_iters < 1) throw ConfigError("planner max_iters must be at least 1");
    if (!(init_variance > 0.0)) throw ConfigError("planner init_variance must be positive");
    if (random_n_samples < 1) throw ConfigError("planner random_n_samples must be at least 1");
}

TrajectoryEvaluator::TrajectoryEvaluator(const MemberDynamics& dynamics, const CostIndicator& cost_model,
                                         StateReward reward, Eigen::VectorXd s0, int action_dim,
                                         double reward_discount, double cost_discount)
    : dynamics_(dynamics), cost_model_(cost_model), reward_(std::move(reward)), s0_(std::move(s0)),
      action_dim_(action_dim), gamma_(reward_discount), beta_(cost_discount) {}

std::vector<CandidateEvaluation> TrajectoryEvaluator::operator()(const Eigen::MatrixXd& sequences) const {
    if (action_dim_ < 1 || sequences.rows() % action_dim_ != 0)
        throw ShapeError("sequence length is not a multiple of the action dimension");
    const auto horizon = static_cast<int>(sequences.rows() / action_dim_);
    const Eigen::Index n = sequences.cols();
    const int members = dynamics_.ensemble_size();

    Eigen::MatrixXd reward_sum = Eigen::MatrixXd::Zero(horizon, n);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> worst =
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(horizon, n);
    std::vector<std::uint8_t> labels;

    for (int b = 0; b < members; ++b) {
        Eigen::MatrixXd state = s0_.replicate(1, n);
        for (int t = 0; t < horizon; ++t) {
            Eigen::MatrixXd next =
                dynamics_.predict_member_batch(b, state, sequences.middleRows(t * action_dim_, action_dim_));
            if (!next.allFinite()) throw PropagationError(static_cast<std::size_t>(t), static_cast<std::size_t>(b));
            for (Eigen::Index i = 0; i < n; ++i) reward_sum(t, i) += reward_(state.col(i), next.col(i));
            cost_model_.predict_batch(next, labels);
            for (Eigen::Index i = 0; i < n; ++i)
                worst(t, i) = std::max(worst(t, i), labels[static_cast<std::size_t>(i)]);
            state = std::move(next);
        }
    }

    std::vector<CandidateEvaluation> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double r = 0.0, c = 0.0, gt = 1.0, bt = 1.0;
        for (int t = 0; t < horizon; ++t) {
            r += gt * (reward_sum(t, i) / members);
            c += bt * worst(t, i);
            gt *= gamma_;
            bt *= beta_;
        }
        out[static_cast<std::size_t>(i)] = {r, c};
    }
    return out;
}

CandidateEvaluation evaluate_trajectory(const MemberDynamics& dynamics, const CostIndicator& cost_model,
                                        const StateReward& reward, const Eigen::VectorXd& s0,
                                        const Eigen::VectorXd& sequence, int action_dim, double reward_discount,
                                        double cost_discount) {
    TrajectoryEvaluator eval(dynamics, cost_model, reward, s0, action_dim, reward_discount, cost_discount);
    return eval(Eigen::MatrixXd(sequence)).front();
}

std::vector<int> select_elites_rce(const std::vector<CandidateEvaluation>& evals, int k) {
    std::vector<int> feasible, all(evals.size());
    std::iota(all.begin(), all.end(), 0);
    for (int i : all)
        if (evals[static_cast<std::size_t>(i)].feasible()) feasible.push_back(i);

    std::vector<int> pool;
    if (feasible.empty()) {
        pool = all;
        std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
            const auto& ea = evals[static_cast<std::size_t>(a)];
            const auto& eb = evals[static_cast<std::size_t>(b)];
            if (ea.cost != eb.cost) return ea.cost < eb.cost;
            return ea.reward > eb.reward;
        });
    } else {
        pool = feasible;
        std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
            return evals[static_cast<std::size_t>(a)].reward > evals[static_cast<std::size_t>(b)].reward;
        });
    }
    pool.resize(std::min(pool.size(), static_cast<std::size_t>(k)));
    return pool;
}

std::vector<int> select_elites_penalty(const std::vector<CandidateEvaluation>& evals, int k, double penalty) {
    std::vector<int> order(evals.size());
    std::iota(order.begin(), order.end(), 0);
    auto score = [&](int i) {
        const auto& e = evals[static_cast<std::size_t>(i)];
        return e.reward - penalty * e.cost;
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score(a) > score(b); });
    order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
    return order;
}

PlanDistribution refit_distribution(const Eigen::MatrixXd& samples, const std::vector<int>& elites,
                                    double variance_floor) {
    if (elites.empty()) throw UsageError("cannot refit a distribution from an empty elite set");
    const Eigen::MatrixXd chosen = samples(Eigen::all, elites);
    const double n = static_cast<double>(elites.size());
    PlanDistribution d;
    d.mean = chosen.rowwise().sum() / n;
    d.variance = ((chosen.colwise() - d.mean).cwiseAbs2().rowwise().sum() / n).cwiseMax(variance_floor);
    return d;
}

Eigen::MatrixXd sample_sequences(const PlanDistribution& dist, int n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index dim = dist.mean.size();
    const Eigen::VectorXd stddev = dist.variance.cwiseSqrt();
    Eigen::MatrixXd out(dim, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < dim; ++d) out(d, i) = std::clamp(dist.mean[d] + stddev[d] * normal(rng), -1.0, 1.0);
    return out;
}

namespace {

void check_distribution(const PlannerConfig& cfg, const PlanDistribution& init) {
    if (init.mean.size() != cfg.dimension() || init.variance.size() != cfg.dimension())
        throw ShapeError("plan distribution length must equal horizon * action_dim");
    if (!(init.variance.array() > 0.0).all()) throw ConfigError("plan distribution variance must be positive");
}

template <typename SelectElites, typename Better>
SolveResult run_cross_entropy(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                              std::uint64_t seed, SelectElites select, Better better) {
    cfg.validate();
    check_distribution(cfg, init);
    Rng rng(seed);
    SolveResult result;
    PlanDistribution dist = init;
    std::vector<CandidateEvaluation> evals;
    for (int it = 0; it < cfg.max_iters; ++it) {
        result.final_samples = sample_sequences(dist, cfg.n_samples, rng);
        evals = evaluator(result.final_samples);
        if (evals.size() != static_cast<std::size_t>(cfg.n_samples))
            throw ShapeError("evaluator returned the wrong number of evaluations");
        result.final_elites = select(evals);
        dist = refit_distribution(result.final_samples, result.final_elites);

        int best = result.final_elites.front();
        for (int e : result.final_elites)
            if (better(evals[static_cast<std::size_t>(e)], evals[static_cast<std::size_t>(best)])) best = e;
        IterationTrace tr;
        tr.iteration = it;
        tr.n_feasible = static_cast<int>(std::count_if(evals.begin(), evals.end(), [](const auto& e) { return e.feasible(); }));
        tr.best_reward = evals[static_cast<std::size_t>(best)].reward;
        tr.best_cost = evals[static_cast<std::size_t>(best)].cost;
        tr.variance_sum = dist.variance.sum();
        result.trace.push_back(tr);
        result.sequence = result.final_samples.col(best);
        result.evaluation = evals[static_cast<std::size_t>(best)];
        if (tr.variance_sum < cfg.var_stop_epsilon) break;
    }
    result.final_distribution = dist;
    return result;
}

}  // namespace

SolveResult rce_solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                      std::uint64_t seed) {
    if (cfg.mode != PlannerMode::rce) throw ConfigError("rce_solve requires planner mode rce");
    // Elites are all feasible or all infeasible, so the feasible preference
    // reduces to the highest reward; strict comparison keeps the earliest elite.
    auto better = [](const CandidateEvaluation& a, const CandidateEvaluation& b) {
        if (a.feasible() != b.feasible()) return a.feasible();
        return a.reward > b.reward;
    };
    return run_cross_entropy(
        cfg, init, evaluator, seed, [&](const auto& evals) { return select_elites_rce(evals, cfg.n_elites); }, better);
}

SolveResult cem_penalty_solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                              std::uint64_t seed) {
    if (cfg.mode != PlannerMode::cem_penalty) throw ConfigError("cem_penalty_solve requires planner mode cem_penalty");
    const double lambda = cfg.penalty;
    auto better = [lambda](const CandidateEvaluation& a, const CandidateEvaluation& b) {
        return a.reward - lambda * a.cost > b.reward - lambda * b.cost;
    };
    return run_cross_entropy(
        cfg, init, evaluator, seed,
        [&](const auto& evals) { return select_elites_penalty(evals, cfg.n_elites, lambda); }, better);
}

SolveResult random_solve(const PlannerConfig& cfg, const BatchEvaluator& evaluator, std::uint64_t seed) {
    if (cfg.mode != PlannerMode::random) throw ConfigError("random_solve requires planner mode random");
    cfg.validate();
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SolveResult result;
    result.final_samples.resize(cfg.dimension(), cfg.random_n_samples);
    for (Eigen::Index i = 0; i < result.final_samples.cols(); ++i)
        for (Eigen::Index d = 0; d < result.final_samples.rows(); ++d) result.final_samples(d, i) = u(rng);
    const auto evals = evaluator(result.final_samples);
    if (evals.size() != static_cast<std::size_t>(cfg.random_n_samples))
        throw ShapeError("evaluator returned the wrong number of evaluations");
    int best = 0;
    for (int i = 1; i < cfg.random_n_samples; ++i) {
        const auto& e = evals[static_cast<std::size_t>(i)];
        const auto& eb = evals[static_cast<std::size_t>(best)];
        if (e.reward - cfg.penalty * e.cost > eb.reward - cfg.penalty * eb.cost) best = i;
    }
    result.sequence = result.final_samples.col(best);
    result.evaluation = evals[static_cast<std::size_t>(best)];
    result.final_elites = {best};
    IterationTrace tr;
    tr.n_feasible = static_cast<int>(std::count_if(evals.begin(), evals.end(), [](const auto& e) { return e.feasible(); }));
    tr.best_reward = result.evaluation.reward;
    tr.best_cost = result.evaluation.cost;
    result.trace.push_back(tr);
    return result;
}

SolveResult solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                  std::uint64_t seed) {
    switch (cfg.mode) {
        case PlannerMode::rce: return rce_solve(cfg, init, evaluator, seed);
        case PlannerMode::cem_penalty: return cem_penalty_solve(cfg, init, evaluator, seed);
        case PlannerMode::random: return random_solve(cfg, evaluator, seed);
    }
    throw ConfigError("unknown planner mode");
}

PlanDistribution cold_start(const PlannerConfig& cfg) {
    return {Eigen::VectorXd::Zero(cfg.dimension()), Eigen::VectorXd::Constant(cfg.dimension(), cfg.init_variance)};
}

PlanDistribution warm_start(const Eigen::VectorXd& previous, const PlannerConfig& cfg) {
    const int dim = cfg.dimension();
    if (previous.size() != dim) throw ShapeError("previous plan length must equal horizon * action_dim");
    PlanDistribution d = cold_start(cfg);
    d.mean.head(dim - cfg.action_dim) = previous.tail(dim - cfg.action_dim);
    return d;
}

std::string format_trace(const std::vector<IterationTrace>& trace, long long control_step) {
    std::string out;
    char buf[256];
    for (const auto& t : trace) {
        std::snprintf(buf, sizeof buf, "step=%lld iter=%d feasible=%d best_reward=%.17g best_cost=%.17g var_sum=%.17g\n",
                      control_step, t.iteration, t.n_feasible, t.best_reward, t.best_cost, t.variance_sum);
        out += buf;
    }
    return out;
}

}  // namespace safe_mpc
