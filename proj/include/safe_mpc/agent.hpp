#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "safe_mpc/cost_classifier.hpp"
#include "safe_mpc/dynamics_ensemble.hpp"
#include "safe_mpc/environment.hpp"
#include "safe_mpc/errors.hpp"
#include "safe_mpc/planner.hpp"

namespace safe_mpc {

struct AgentConfig {
    WorldConfig world;
    int init_random_steps = 5000;
    int retrain_interval = 400;
    int total_steps = 10000;  // planned steps after the random phase
    PlannerConfig planner;
    TrainConfig dynamics_train;
    std::vector<int> dynamics_hidden{1024, 1024, 1024};
    int ensemble_size = 4;
    GbdtConfig classifier;
    double max_safe_ratio = 3.0;
    std::size_t safe_buffer_capacity = 0;  // 0 = unbounded
    std::size_t unsafe_buffer_capacity = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpisodeRecord {
    int episode = 0;
    long long steps_so_far = 0;
    double reward = 0.0;          // J_r
    long long cost = 0;           // J_c, violation steps in the episode
    long long cumulative_cost = 0;
    double wall_clock_seconds = 0.0;
};

struct RunRecord {
    std::uint64_t seed = 0;
    AgentConfig config;
    std::vector<EpisodeRecord> episodes;
    std::vector<long long> retrain_steps;  // environment step index at each refit
    long long total_env_steps = 0;
    long long cumulative_cost = 0;
    std::size_t dynamics_buffer_size = 0;  // stored transitions at the end of the run
    std::size_t safe_buffer_size = 0;
    std::size_t unsafe_buffer_size = 0;
    bool aborted = false;
    std::string diagnostic;
};

/// Everything observed about one environment step, for hooks and tests.
struct StepEvent {
    long long env_step = 0;  // 0-based index of this step within the run
    bool planned = false;
    int model_version = 0;   // 0 before the first refit
    Observation observation;
    Eigen::VectorXd plan;    // empty during the random phase
    Action action;
    StepResult result;
    RobotState robot;        // post-step
};

struct RunHooks {
    std::function<void(const EpisodeRecord&)> on_episode;
    std::function<void(const StepEvent&)> on_step;
    std::function<void(const std::string&)> on_trace;  // planner trace lines
    std::function<void(const std::string&)> on_layout;  // trajectory dump header per episode
    std::filesystem::path checkpoint_dir;               // empty = no checkpoints
    int checkpoint_every = 1;                           // refits between checkpoints
};

/// Model refit failed; carries the environment step at which it happened.
class RunError : public Error {
public:
    RunError(long long step, const std::string& what)
        : Error("at environment step " + std::to_string(step) + ": " + what), step_(step) {}
    long long step() const noexcept { return step_; }

private:
    long long step_;
};

/// Layout seed of the given episode of a run.
std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t world_seed, int episode);

/// Uniform random in-bounds actions for n steps, resetting the environment
/// whenever an episode finishes. Reset flags mark goal relocations.
std::vector<Transition> collect_random(Environment& env, int n, std::uint64_t seed);

/// Random seed phase, then model-predictive control with periodic refits of
/// the dynamics ensemble and the cost classifier.
RunRecord train_and_rollout(const AgentConfig& cfg, const RunHooks& hooks = {});

}  // namespace safe_mpc
