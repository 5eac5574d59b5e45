#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace safe_mpc {

using Observation = Eigen::VectorXd;
using Action = Eigen::VectorXd;
using Vec2 = Eigen::Vector2d;

enum class RobotKind { point, car };

std::string to_string(RobotKind kind);
RobotKind robot_kind_from_string(const std::string& name);

/// Layout and kinematic parameters of the 2D goal-navigation world.
struct WorldConfig {
    double arena_half_extent = 2.0;
    int n_hazards = 4;
    int n_vases = 1;
    double hazard_radius = 0.3;
    double vase_radius = 0.1;
    double goal_radius = 0.3;
    double robot_footprint = 0.05;
    RobotKind robot_kind = RobotKind::point;
    int episode_length = 400;
    int k_nearest = 3;
    std::uint64_t seed = 0;
    double dt = 0.1;
    double max_speed = 0.5;

    static constexpr int action_dim = 2;

    /// Throws ConfigError on any violated invariant.
    void validate() const;

    int observation_dim() const { return 4 + 4 * k_nearest; }
    double sentinel_magnitude() const { return 2.0 * arena_half_extent; }
};

/// Level presets. Goal1 analogs carry 4 hazards and 1 vase, Goal2 analogs 8 and 4.
WorldConfig point_goal1();
WorldConfig point_goal2();
WorldConfig car_goal1();
WorldConfig car_goal2();

/// Index ranges of the fields packed into an observation vector.
struct ObservationLayout {
    int k_nearest;

    static constexpr int velocity = 0;
    static constexpr int goal = 2;
    int hazard(int slot) const { return 4 + 2 * slot; }
    int vase(int slot) const { return 4 + 2 * k_nearest + 2 * slot; }
    int size() const { return 4 + 4 * k_nearest; }
};

struct RobotState {
    Vec2 position = Vec2::Zero();
    double heading = 0.0;
    Vec2 velocity = Vec2::Zero();  // point robot
    double speed = 0.0;            // car robot
};

struct WorldLayout {
    Vec2 goal = Vec2::Zero();
    std::vector<Vec2> hazards;
    std::vector<Vec2> vases;
};

struct StepResult {
    Observation next_observation;
    double reward = 0.0;
    int cost = 0;
    bool goal_reached = false;
    bool slots_reordered = false;  // a nearest-object slot now holds a different object
    bool done = false;
};

/// Deterministic goal-navigation CMDP with circular hazards and vases.
///
/// Each reset draws a fresh layout from the given seed. Episodes last exactly
/// `episode_length` steps; violations never end an episode early.
class Environment {
public:
    explicit Environment(WorldConfig config);

    Observation reset(std::uint64_t seed);
    Observation reset(const WorldConfig& config, std::uint64_t seed);

    /// Advances one control step. Action components are clamped to [-1, 1].
    StepResult step(const Action& action);

    Observation observe() const;

    /// Indicator cost of a robot centred at `position` in the current layout.
    int cost_at(const Vec2& position) const;

    const WorldConfig& config() const noexcept { return config_; }
    const RobotState& robot() const noexcept { return robot_; }
    const WorldLayout& layout() const noexcept { return layout_; }
    int steps_elapsed() const noexcept { return steps_; }
    bool needs_reset() const noexcept { return !started_ || steps_ >= config_.episode_length; }

private:
    std::vector<int> slot_assignment() const;
    Vec2 sample_point(double margin);
    bool goal_position_ok(const Vec2& goal, const Vec2* robot_position) const;
    Vec2 sample_goal(const Vec2* robot_position);

    WorldConfig config_;
    RobotState robot_;
    WorldLayout layout_;
    std::mt19937_64 rng_;
    int steps_ = 0;
    bool started_ = false;
};

/// Dense progress plus goal bonus between two observations, using only their
/// goal-offset fields. Throws ShapeError when lengths differ from the config.
double true_reward(const WorldConfig& config, const Eigen::Ref<const Eigen::VectorXd>& prev,
                   const Eigen::Ref<const Eigen::VectorXd>& next);

/// Uniform random action in the [-1, 1] box.
Action random_action(std::mt19937_64& rng);

/// Layout header line for trajectory dumps.
std::string format_layout(const Environment& env, std::uint64_t episode_seed);

/// One line-oriented trajectory record: step index, robot state, action, reward, cost.
std::string format_step_record(int step, const RobotState& robot, const Action& action,
                               const StepResult& result);

}  // namespace safe_mpc
