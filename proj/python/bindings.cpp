// Python bindings for the core operations.

#include <map>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "safe_mpc/agent.hpp"
#include "safe_mpc/config.hpp"
#include "safe_mpc/cost_classifier.hpp"
#include "safe_mpc/dynamics_ensemble.hpp"
#include "safe_mpc/environment.hpp"
#include "safe_mpc/harness.hpp"
#include "safe_mpc/mlp.hpp"
#include "safe_mpc/planner.hpp"

namespace py = pybind11;
using namespace safe_mpc;

namespace {

KeyValues to_key_values(const std::map<std::string, std::string>& overrides) {
    return {overrides.begin(), overrides.end()};
}

AgentConfig make_config(const std::string& task, const std::string& method,
                        const std::map<std::string, std::string>& overrides, std::uint64_t seed) {
    AgentConfig cfg = default_agent_config(task_from_string(task), method_from_string(method));
    apply_overrides(cfg, to_key_values(overrides));
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

// Wraps a Python callable taking a (dim, n) array and returning (rewards, costs).
BatchEvaluator wrap_evaluator(py::function fn) {
    return [fn](const Eigen::MatrixXd& sequences) {
        py::gil_scoped_acquire gil;
        auto [rewards, costs] = fn(sequences).cast<std::pair<Eigen::VectorXd, Eigen::VectorXd>>();
        if (rewards.size() != sequences.cols() || costs.size() != sequences.cols())
            throw ShapeError("evaluator must return one reward and one cost per column");
        std::vector<CandidateEvaluation> out(static_cast<std::size_t>(sequences.cols()));
        for (Eigen::Index i = 0; i < sequences.cols(); ++i) out[i] = {rewards[i], costs[i]};
        return out;
    };
}

std::vector<Transition> to_transitions(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
                                       const Eigen::MatrixXd& next_obs, const std::vector<bool>& resets) {
    if (obs.rows() != actions.rows() || obs.rows() != next_obs.rows())
        throw ShapeError("observations, actions and next observations need the same number of rows");
    if (!resets.empty() && resets.size() != static_cast<std::size_t>(obs.rows()))
        throw ShapeError("reset flags need one entry per row");
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(obs.rows()));
    for (Eigen::Index i = 0; i < obs.rows(); ++i)
        out.push_back({obs.row(i).transpose(), actions.row(i).transpose(), next_obs.row(i).transpose(), 0,
                       resets.empty() ? false : static_cast<bool>(resets[i])});
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Constrained model-based RL: environment, models, planners and experiment harness";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<UsageError>(m, "UsageError", base);
    py::register_exception<ParseError>(m, "ParseError", base);

    // environment
    py::enum_<RobotKind>(m, "RobotKind").value("point", RobotKind::point).value("car", RobotKind::car);

    py::class_<WorldConfig>(m, "WorldConfig")
        .def(py::init<>())
        .def_readwrite("arena_half_extent", &WorldConfig::arena_half_extent)
        .def_readwrite("n_hazards", &WorldConfig::n_hazards)
        .def_readwrite("n_vases", &WorldConfig::n_vases)
        .def_readwrite("hazard_radius", &WorldConfig::hazard_radius)
        .def_readwrite("vase_radius", &WorldConfig::vase_radius)
        .def_readwrite("goal_radius", &WorldConfig::goal_radius)
        .def_readwrite("robot_footprint", &WorldConfig::robot_footprint)
        .def_readwrite("robot_kind", &WorldConfig::robot_kind)
        .def_readwrite("episode_length", &WorldConfig::episode_length)
        .def_readwrite("k_nearest", &WorldConfig::k_nearest)
        .def_readwrite("seed", &WorldConfig::seed)
        .def_readwrite("dt", &WorldConfig::dt)
        .def_readwrite("max_speed", &WorldConfig::max_speed)
        .def_property_readonly("observation_dim", &WorldConfig::observation_dim)
        .def("validate", &WorldConfig::validate);

    m.def("point_goal1", &point_goal1);
    m.def("point_goal2", &point_goal2);
    m.def("car_goal1", &car_goal1);
    m.def("car_goal2", &car_goal2);

    py::class_<StepResult>(m, "StepResult")
        .def_readonly("next_observation", &StepResult::next_observation)
        .def_readonly("reward", &StepResult::reward)
        .def_readonly("cost", &StepResult::cost)
        .def_readonly("goal_reached", &StepResult::goal_reached)
        .def_readonly("slots_reordered", &StepResult::slots_reordered)
        .def_readonly("done", &StepResult::done);

    py::class_<Environment>(m, "Environment")
        .def(py::init<WorldConfig>(), py::arg("config"))
        .def("reset", py::overload_cast<std::uint64_t>(&Environment::reset), py::arg("seed"))
        .def("step", &Environment::step, py::arg("action"))
        .def("observe", &Environment::observe)
        .def("cost_at", &Environment::cost_at, py::arg("position"))
        .def_property_readonly("config", &Environment::config)
        .def_property_readonly("position", [](const Environment& e) { return e.robot().position; })
        .def_property_readonly("steps_elapsed", &Environment::steps_elapsed);

    m.def("true_reward",
          [](const WorldConfig& c, const Eigen::VectorXd& prev, const Eigen::VectorXd& next) {
              return true_reward(c, prev, next);
          },
          py::arg("config"), py::arg("prev_obs"), py::arg("next_obs"));

    // dynamics ensemble
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("subsample_fraction", &TrainConfig::subsample_fraction);

    py::class_<EnsembleDynamicsModel>(m, "EnsembleDynamicsModel")
        .def(py::init<int, int, int, const std::vector<int>&, std::uint64_t>(), py::arg("observation_dim"),
             py::arg("action_dim"), py::arg("ensemble_size"), py::arg("hidden"), py::arg("seed"))
        .def(
            "fit",
            [](EnsembleDynamicsModel& model, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
               const Eigen::MatrixXd& next_obs, const TrainConfig& cfg, std::uint64_t seed,
               const std::vector<bool>& resets) {
                const FitReport r = model.fit(to_transitions(obs, actions, next_obs, resets), cfg, seed);
                return r.epoch_loss;
            },
            py::arg("observations"), py::arg("actions"), py::arg("next_observations"), py::arg("config"),
            py::arg("seed"), py::arg("resets") = std::vector<bool>{},
            "Rows are samples. Returns the per-member, per-epoch normalized training loss.")
        .def("predict_member", &EnsembleDynamicsModel::predict_member, py::arg("member"), py::arg("observation"),
             py::arg("action"))
        .def("predict_distribution", &EnsembleDynamicsModel::predict_distribution, py::arg("observation"),
             py::arg("action"))
        .def_property_readonly("ensemble_size", &EnsembleDynamicsModel::ensemble_size);

    // cost classifier
    py::class_<GbdtConfig>(m, "GbdtConfig")
        .def(py::init<>())
        .def_readwrite("n_estimators", &GbdtConfig::n_estimators)
        .def_readwrite("max_depth", &GbdtConfig::max_depth)
        .def_readwrite("max_leaves", &GbdtConfig::max_leaves)
        .def_readwrite("learning_rate", &GbdtConfig::learning_rate)
        .def_readwrite("min_samples_leaf", &GbdtConfig::min_samples_leaf)
        .def_readwrite("decision_threshold", &GbdtConfig::decision_threshold);

    py::class_<GbdtModel>(m, "GbdtModel")
        .def("predict", &GbdtModel::predict, py::arg("x"))
        .def("probability", &GbdtModel::probability, py::arg("x"))
        .def(
            "predict_batch",
            [](const GbdtModel& model, const Eigen::MatrixXd& rows) {
                std::vector<std::uint8_t> labels;
                model.predict_batch(rows.transpose(), labels);
                return std::vector<int>(labels.begin(), labels.end());
            },
            py::arg("rows"), "Rows are samples.")
        .def_property_readonly("n_trees", [](const GbdtModel& g) { return g.trees().size(); });

    m.def(
        "fit_gbdt",
        [](const GbdtConfig& cfg, const Eigen::MatrixXd& rows, const std::vector<int>& labels) {
            return fit_gbdt(cfg, rows.transpose(), std::vector<std::uint8_t>(labels.begin(), labels.end()));
        },
        py::arg("config"), py::arg("rows"), py::arg("labels"));

    m.def(
        "fit_classifier",
        [](const GbdtConfig& cfg, const Eigen::MatrixXd& rows, const std::vector<int>& labels, double max_safe_ratio,
           std::uint64_t seed) {
            if (labels.size() != static_cast<std::size_t>(rows.rows()))
                throw ShapeError("labels need one entry per row");
            DualBuffer buffer(max_safe_ratio);
            for (Eigen::Index i = 0; i < rows.rows(); ++i) buffer.ingest(rows.row(i).transpose(), labels[i]);
            return fit_classifier(cfg, buffer, seed);
        },
        py::arg("config"), py::arg("rows"), py::arg("labels"), py::arg("max_safe_ratio") = 3.0, py::arg("seed") = 0);

    // planner
    py::enum_<PlannerMode>(m, "PlannerMode")
        .value("rce", PlannerMode::rce)
        .value("cem_penalty", PlannerMode::cem_penalty)
        .value("random", PlannerMode::random);

    py::class_<PlannerConfig>(m, "PlannerConfig")
        .def(py::init<>())
        .def_readwrite("mode", &PlannerConfig::mode)
        .def_readwrite("n_samples", &PlannerConfig::n_samples)
        .def_readwrite("n_elites", &PlannerConfig::n_elites)
        .def_readwrite("horizon", &PlannerConfig::horizon)
        .def_readwrite("gamma", &PlannerConfig::gamma)
        .def_readwrite("beta", &PlannerConfig::beta)
        .def_readwrite("penalty", &PlannerConfig::penalty)
        .def_readwrite("max_iters", &PlannerConfig::max_iters)
        .def_readwrite("var_stop_epsilon", &PlannerConfig::var_stop_epsilon)
        .def_readwrite("init_variance", &PlannerConfig::init_variance)
        .def_readwrite("random_n_samples", &PlannerConfig::random_n_samples)
        .def_readwrite("action_dim", &PlannerConfig::action_dim);

    py::class_<SolveResult>(m, "SolveResult")
        .def_readonly("sequence", &SolveResult::sequence)
        .def_property_readonly("reward", [](const SolveResult& r) { return r.evaluation.reward; })
        .def_property_readonly("cost", [](const SolveResult& r) { return r.evaluation.cost; })
        .def_readonly("final_elites", &SolveResult::final_elites)
        .def_property_readonly("iterations", [](const SolveResult& r) { return r.trace.size(); });

    const auto solver = [](auto fn) {
        return [fn](const PlannerConfig& cfg, py::function evaluator, std::uint64_t seed) {
            return fn(cfg, cold_start(cfg), wrap_evaluator(std::move(evaluator)), seed);
        };
    };
    m.def("rce_solve", solver(rce_solve), py::arg("config"), py::arg("evaluator"), py::arg("seed") = 0,
          "evaluator(sequences[dim, n]) -> (rewards[n], costs[n])");
    m.def("cem_penalty_solve", solver(cem_penalty_solve), py::arg("config"), py::arg("evaluator"),
          py::arg("seed") = 0);
    m.def(
        "random_solve",
        [](const PlannerConfig& cfg, py::function evaluator, std::uint64_t seed) {
            return random_solve(cfg, wrap_evaluator(std::move(evaluator)), seed);
        },
        py::arg("config"), py::arg("evaluator"), py::arg("seed") = 0);

    const auto to_evals = [](const Eigen::VectorXd& rewards, const Eigen::VectorXd& costs) {
        if (rewards.size() != costs.size()) throw ShapeError("rewards and costs differ in length");
        std::vector<CandidateEvaluation> e(static_cast<std::size_t>(rewards.size()));
        for (Eigen::Index i = 0; i < rewards.size(); ++i) e[i] = {rewards[i], costs[i]};
        return e;
    };
    m.def(
        "select_elites_rce",
        [to_evals](const Eigen::VectorXd& r, const Eigen::VectorXd& c, int k) { return select_elites_rce(to_evals(r, c), k); },
        py::arg("rewards"), py::arg("costs"), py::arg("k"));
    m.def(
        "select_elites_penalty",
        [to_evals](const Eigen::VectorXd& r, const Eigen::VectorXd& c, int k, double penalty) {
            return select_elites_penalty(to_evals(r, c), k, penalty);
        },
        py::arg("rewards"), py::arg("costs"), py::arg("k"), py::arg("penalty"));

    m.def(
        "evaluate_trajectory",
        [](const EnsembleDynamicsModel& dynamics, const GbdtModel& cost_model, const WorldConfig& world,
           const Eigen::VectorXd& s0, const Eigen::VectorXd& sequence, double gamma, double beta) {
            const StateReward reward = [&world](const Eigen::Ref<const Eigen::VectorXd>& p,
                                                const Eigen::Ref<const Eigen::VectorXd>& n) {
                return true_reward(world, p, n);
            };
            const auto e = evaluate_trajectory(dynamics, cost_model, reward, s0, sequence, WorldConfig::action_dim,
                                               gamma, beta);
            return std::pair{e.reward, e.cost};
        },
        py::arg("dynamics"), py::arg("cost_model"), py::arg("world"), py::arg("s0"), py::arg("sequence"),
        py::arg("gamma") = 0.98, py::arg("beta") = 0.4, "Returns (discounted reward, discounted worst-case cost).");

    // MLP gradient probe
    m.def(
        "gradient_check",
        [](int in, const std::vector<int>& hidden, int out, std::uint64_t seed) {
            Rng rng(seed);
            MlpRegressor net(in, hidden, out, rng);
            for (auto& l : net.layers()) l.bias.setConstant(0.1);
            std::normal_distribution<double> n(0.0, 1.0);
            Eigen::VectorXd x(in), y(out);
            for (auto& v : x) v = n(rng);
            for (auto& v : y) v = n(rng);
            return gradient_check(net, x, y, seed);
        },
        py::arg("n_inputs"), py::arg("hidden"), py::arg("n_outputs"), py::arg("seed") = 0,
        "Max relative error of analytic vs central-difference gradients on a random probe network.");

    // agent and harness
    py::class_<EpisodeRecord>(m, "EpisodeRecord")
        .def_readonly("episode", &EpisodeRecord::episode)
        .def_readonly("steps_so_far", &EpisodeRecord::steps_so_far)
        .def_readonly("reward", &EpisodeRecord::reward)
        .def_readonly("cost", &EpisodeRecord::cost)
        .def_readonly("cumulative_cost", &EpisodeRecord::cumulative_cost);

    py::class_<RunRecord>(m, "RunRecord")
        .def_readonly("seed", &RunRecord::seed)
        .def_readonly("episodes", &RunRecord::episodes)
        .def_readonly("retrain_steps", &RunRecord::retrain_steps)
        .def_readonly("total_env_steps", &RunRecord::total_env_steps)
        .def_readonly("cumulative_cost", &RunRecord::cumulative_cost)
        .def_readonly("aborted", &RunRecord::aborted)
        .def_readonly("diagnostic", &RunRecord::diagnostic);

    m.def(
        "train_and_rollout",
        [](const std::string& task, const std::string& method, const std::map<std::string, std::string>& overrides,
           std::uint64_t seed) {
            const AgentConfig cfg = make_config(task, method, overrides, seed);
            py::gil_scoped_release release;
            return train_and_rollout(cfg);
        },
        py::arg("task") = "point_goal1", py::arg("method") = "mpc_rce",
        py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("seed") = 0);

    m.def("config_keys", &config_keys);
    m.def(
        "resolved_config",
        [](const std::string& task, const std::string& method, const std::map<std::string, std::string>& overrides) {
            return dump_config(make_config(task, method, overrides, 0));
        },
        py::arg("task") = "point_goal1", py::arg("method") = "mpc_rce",
        py::arg("overrides") = std::map<std::string, std::string>{});

    py::class_<SummaryRow>(m, "SummaryRow")
        .def_readonly("task", &SummaryRow::task)
        .def_readonly("method", &SummaryRow::method)
        .def_readonly("n_runs", &SummaryRow::n_runs)
        .def_readonly("reward_mean", &SummaryRow::reward_mean)
        .def_readonly("reward_std", &SummaryRow::reward_std)
        .def_readonly("cost_mean", &SummaryRow::cost_mean)
        .def_readonly("cost_std", &SummaryRow::cost_std)
        .def_readonly("violations_first_10k_mean", &SummaryRow::violations_first_10k_mean)
        .def_readonly("total_violations_mean", &SummaryRow::total_violations_mean)
        .def_readonly("best", &SummaryRow::best);

    py::class_<SummaryTable>(m, "SummaryTable")
        .def_readonly("rows", &SummaryTable::rows)
        .def("format", &SummaryTable::format)
        .def("to_csv", &SummaryTable::to_csv);

    m.def(
        "run_experiment",
        [](const std::string& task, const std::string& method, const std::vector<std::uint64_t>& seeds,
           const std::filesystem::path& out, const std::map<std::string, std::string>& overrides, int jobs) {
            ExperimentSpec spec;
            spec.task = task_from_string(task);
            spec.method = method_from_string(method);
            spec.seeds = seeds;
            spec.out = out;
            spec.overrides = to_key_values(overrides);
            spec.jobs = jobs;
            py::gil_scoped_release release;
            return run_experiment(spec);
        },
        py::arg("task"), py::arg("method"), py::arg("seeds"), py::arg("out"),
        py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("jobs") = 1);

    m.def("compare_runs", &compare_runs, py::arg("dirs"));
    m.def(
        "replay_run",
        [](const std::filesystem::path& out, const std::string& id) {
            const ReplayOutcome r = replay_run(out, id);
            return std::pair{r.identical, r.message};
        },
        py::arg("out"), py::arg("run_id"));
}
