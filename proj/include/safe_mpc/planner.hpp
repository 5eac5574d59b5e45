#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "safe_mpc/model_interfaces.hpp"
#include "safe_mpc/rng.hpp"

namespace safe_mpc {

enum class PlannerMode { rce, cem_penalty, random };

std::string to_string(PlannerMode mode);
PlannerMode planner_mode_from_string(const std::string& name);

struct PlannerConfig {
    PlannerMode mode = PlannerMode::rce;
    int n_samples = 500;
    int n_elites = 12;
    int horizon = 8;
    double gamma = 0.98;
    double beta = 0.4;
    double penalty = 1e4;
    int max_iters = 8;
    double var_stop_epsilon = 0.01;
    double init_variance = 0.25;
    int random_n_samples = 5000;
    int action_dim = 2;

    void validate() const;
    int dimension() const { return horizon * action_dim; }

    /// RCE discounts predicted violations with beta; the penalty baselines
    /// fold cost into the reward stream and share its gamma.
    double cost_discount() const { return mode == PlannerMode::rce ? beta : gamma; }
};

inline constexpr double kVarianceFloor = 1e-6;

/// Factorized Gaussian over flattened action sequences (action-major per step).
struct PlanDistribution {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

struct CandidateEvaluation {
    double reward = 0.0;
    double cost = 0.0;

    bool feasible() const { return cost == 0.0; }
};

/// Scores a batch of flattened sequences, one per column.
using BatchEvaluator = std::function<std::vector<CandidateEvaluation>(const Eigen::MatrixXd& sequences)>;

/// Reward of a single predicted transition, r(s_t, s_{t+1}).
using StateReward =
    std::function<double(const Eigen::Ref<const Eigen::VectorXd>& prev, const Eigen::Ref<const Eigen::VectorXd>& next)>;

/// Trajectory-sampling estimate of discounted reward and worst-case cost.
///
/// One particle per ensemble member, all starting at `s0`; particle b only
/// ever advances through member b. Reward averages members per step, cost
/// takes the member maximum per step.
class TrajectoryEvaluator {
public:
    TrajectoryEvaluator(const MemberDynamics& dynamics, const CostIndicator& cost_model, StateReward reward,
                        Eigen::VectorXd s0, int action_dim, double reward_discount, double cost_discount);

    std::vector<CandidateEvaluation> operator()(const Eigen::MatrixXd& sequences) const;

private:
    const MemberDynamics& dynamics_;
    const CostIndicator& cost_model_;
    StateReward reward_;
    Eigen::VectorXd s0_;
    int action_dim_;
    double gamma_;
    double beta_;
};

CandidateEvaluation evaluate_trajectory(const MemberDynamics& dynamics, const CostIndicator& cost_model,
                                        const StateReward& reward, const Eigen::VectorXd& s0,
                                        const Eigen::VectorXd& sequence, int action_dim, double reward_discount,
                                        double cost_discount);

struct IterationTrace {
    int iteration = 0;
    int n_feasible = 0;
    double best_reward = 0.0;
    double best_cost = 0.0;
    double variance_sum = 0.0;
};

struct SolveResult {
    Eigen::VectorXd sequence;
    CandidateEvaluation evaluation;
    std::vector<IterationTrace> trace;
    PlanDistribution final_distribution;
    Eigen::MatrixXd final_samples;  // last iteration's draws
    std::vector<int> final_elites;  // column indices into final_samples
};

/// Elite rule of the robust method: up to k highest-reward feasible samples,
/// or the k lowest-cost samples when none is feasible. Ties: higher reward,
/// then lower index.
std::vector<int> select_elites_rce(const std::vector<CandidateEvaluation>& evals, int k);

/// Elite rule of the penalty baseline: k highest reward - penalty * cost.
std::vector<int> select_elites_penalty(const std::vector<CandidateEvaluation>& evals, int k, double penalty);

/// Empirical mean and population variance of the elite columns, variance
/// floored at `variance_floor`.
PlanDistribution refit_distribution(const Eigen::MatrixXd& samples, const std::vector<int>& elites,
                                    double variance_floor = kVarianceFloor);

/// Draws n sequences and clamps every component to [-1, 1].
Eigen::MatrixXd sample_sequences(const PlanDistribution& dist, int n, Rng& rng);

SolveResult rce_solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                      std::uint64_t seed);
SolveResult cem_penalty_solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                              std::uint64_t seed);
SolveResult random_solve(const PlannerConfig& cfg, const BatchEvaluator& evaluator, std::uint64_t seed);

/// Dispatches on cfg.mode.
SolveResult solve(const PlannerConfig& cfg, const PlanDistribution& init, const BatchEvaluator& evaluator,
                  std::uint64_t seed);

/// Zero mean, init_variance everywhere.
PlanDistribution cold_start(const PlannerConfig& cfg);

/// Shifts the previous plan left by one action, zero-fills the tail, and
/// resets the variance to init_variance.
PlanDistribution warm_start(const Eigen::VectorXd& previous, const PlannerConfig& cfg);

/// One line per iteration: index, |feasible|, best reward, best cost, variance sum.
std::string format_trace(const std::vector<IterationTrace>& trace, long long control_step);

}  // namespace safe_mpc
