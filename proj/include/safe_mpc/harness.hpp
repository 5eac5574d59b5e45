#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "safe_mpc/agent.hpp"
#include "safe_mpc/config.hpp"

namespace safe_mpc {

enum class TaskPreset { point_goal1, point_goal2, car_goal1, car_goal2 };
enum class Method { mpc_rce, mpc_cem, mpc_random };

std::string to_string(TaskPreset task);
std::string to_string(Method method);
TaskPreset task_from_string(const std::string& name);
Method method_from_string(const std::string& name);

/// Defaults for a task/method pair before overrides. Ensemble size is 4 for
/// point robots and 5 for car robots.
AgentConfig default_agent_config(TaskPreset task, Method method);

struct ExperimentSpec {
    TaskPreset task = TaskPreset::point_goal1;
    Method method = Method::mpc_rce;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::filesystem::path out;
    KeyValues overrides;
    int jobs = 1;
    bool write_traces = false;
};

std::string run_id(TaskPreset task, Method method, std::uint64_t seed);

/// Resolved configuration of one run: defaults, then overrides, then the seed.
AgentConfig resolve_config(const ExperimentSpec& spec, std::uint64_t seed);

/// One CSV row per episode.
struct LogRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string method;
    std::string task;
    int episode = 0;
    long long steps_so_far = 0;
    double episodic_reward = 0.0;
    long long episodic_cost = 0;
    long long cumulative_cost = 0;
};

inline constexpr const char* kCsvHeader =
    "run_id,seed,method,task,episode,steps_so_far,episodic_reward,episodic_cost,cumulative_cost";

std::string format_csv_row(const LogRow& row);

/// Parses one run log. Malformed rows raise ParseError with file and line.
std::vector<LogRow> read_run_log(const std::filesystem::path& path);

inline constexpr int kConvergenceEpisodes = 5;
inline constexpr long long kViolationHorizon = 10000;

struct SummaryRow {
    std::string task;
    std::string method;
    int n_runs = 0;
    double reward_mean = 0.0, reward_std = 0.0;  // converged episodic reward
    double cost_mean = 0.0, cost_std = 0.0;      // converged episodic cost
    double violations_first_10k_mean = 0.0, violations_first_10k_std = 0.0;
    double total_violations_mean = 0.0, total_violations_std = 0.0;
    double total_steps_mean = 0.0;
    bool best = false;
};

struct SummaryTable {
    std::vector<SummaryRow> rows;  // sorted by task, then method

    const SummaryRow* find(const std::string& task, const std::string& method) const;
    std::string format() const;
    std::string to_csv() const;
};

/// Converged value of a run: mean over its last `kConvergenceEpisodes` full
/// episodes (a trailing partial episode is ignored).
std::pair<double, double> converged_reward_cost(const std::vector<LogRow>& run);

/// Cumulative violations after `horizon` steps, prorated within the
/// episode that straddles the boundary.
double violations_within(const std::vector<LogRow>& run, long long horizon);

/// Aggregates per (task, method) over the given runs and flags the best method
/// per task: lowest converged cost, then highest converged reward.
SummaryTable summarize(const std::vector<std::vector<LogRow>>& runs);

/// Executes every seed, writes runs/<run_id>.csv and .cfg plus summary files
/// under spec.out, and returns the summary of this spec's runs.
SummaryTable run_experiment(const ExperimentSpec& spec);

/// Recomputes the summary from the run logs found in the given directories.
SummaryTable compare_runs(const std::vector<std::filesystem::path>& dirs);

struct ReplayOutcome {
    bool identical = false;
    std::string message;
};

/// Re-executes a logged run from its saved configuration and compares the
/// regenerated CSV body with the stored one. Optionally writes a
/// line-oriented trajectory dump.
ReplayOutcome replay_run(const std::filesystem::path& out_dir, const std::string& run_id,
                         const std::filesystem::path& trajectory_path = {});

}  // namespace safe_mpc
