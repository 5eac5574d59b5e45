#include "safe_mpc/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "safe_mpc/errors.hpp"

namespace safe_mpc {

namespace {

constexpr int kMaxPlacementAttempts = 10000;

double planar_norm(double x, double y) { return std::sqrt(x * x + y * y); }

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * std::numbers::pi);
    // remainder maps to [-pi, pi]; fold -pi onto pi
    if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    return a;
}

Vec2 rotate_into_frame(const Vec2& v, double heading) {
    const double c = std::cos(heading);
    const double s = std::sin(heading);
    return {c * v.x() + s * v.y(), -s * v.x() + c * v.y()};
}

std::vector<int> nearest_order(const std::vector<Vec2>& objects, const Vec2& position) {
    std::vector<int> order(objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) dist[i] = (objects[i] - position).norm();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
    return order;
}

void write_nearest(const std::vector<Vec2>& objects, const RobotState& robot, RobotKind kind,
                   int k_nearest, double sentinel, Observation& obs, int offset) {
    const std::vector<int> order = nearest_order(objects, robot.position);
    for (int slot = 0; slot < k_nearest; ++slot) {
        Vec2 rel(sentinel, 0.0);
        if (slot < static_cast<int>(order.size())) {
            rel = objects[order[slot]] - robot.position;
            if (kind == RobotKind::car) rel = rotate_into_frame(rel, robot.heading);
        }
        obs[offset + 2 * slot] = rel.x();
        obs[offset + 2 * slot + 1] = rel.y();
    }
}

}  // namespace

std::string to_string(RobotKind kind) { return kind == RobotKind::point ? "point" : "car"; }

RobotKind robot_kind_from_string(const std::string& name) {
    if (name == "point") return RobotKind::point;
    if (name == "car") return RobotKind::car;
    throw ConfigError("unknown robot kind '" + name + "'");
}

void WorldConfig::validate() const {
    if (!(arena_half_extent > 0.0)) throw ConfigError("arena_half_extent must be positive");
    if (!(hazard_radius > 0.0) || !(vase_radius > 0.0) || !(goal_radius > 0.0))
        throw ConfigError("all radii must be positive");
    if (robot_footprint < 0.0) throw ConfigError("robot_footprint must be non-negative");
    if (n_hazards < 0 || n_vases < 0) throw ConfigError("object counts must be non-negative");
    if (episode_length < 1) throw ConfigError("episode_length must be at least 1");
    if (k_nearest < 0) throw ConfigError("k_nearest must be non-negative");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(max_speed > 0.0)) throw ConfigError("max_speed must be positive");
}

WorldConfig point_goal1() { return WorldConfig{}; }

WorldConfig point_goal2() {
    WorldConfig c;
    c.n_hazards = 8;
    c.n_vases = 4;
    return c;
}

WorldConfig car_goal1() {
    WorldConfig c;
    c.robot_kind = RobotKind::car;
    return c;
}

WorldConfig car_goal2() {
    WorldConfig c = point_goal2();
    c.robot_kind = RobotKind::car;
    return c;
}

Environment::Environment(WorldConfig config) : config_(config) { config_.validate(); }

Vec2 Environment::sample_point(double margin) {
    const double half = config_.arena_half_extent - margin;
    if (half <= 0.0) throw ConfigError("object does not fit inside the arena");
    std::uniform_real_distribution<double> u(-half, half);
    const double x = u(rng_);
    const double y = u(rng_);
    return {x, y};
}

bool Environment::goal_position_ok(const Vec2& goal, const Vec2* robot_position) const {
    const double fp = config_.robot_footprint;
    for (const auto& h : layout_.hazards)
        if ((goal - h).norm() < config_.goal_radius + config_.hazard_radius + fp) return false;
    for (const auto& v : layout_.vases)
        if ((goal - v).norm() < config_.goal_radius + config_.vase_radius + fp) return false;
    if (robot_position && (goal - *robot_position).norm() < config_.goal_radius + fp) return false;
    return true;
}

Vec2 Environment::sample_goal(const Vec2* robot_position) {
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        Vec2 g = sample_point(config_.goal_radius);
        if (goal_position_ok(g, robot_position)) return g;
    }
    throw ConfigError("arena too crowded: could not place the goal");
}

Observation Environment::reset(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    config_ = config;
    return reset(seed);
}

Observation Environment::reset(std::uint64_t seed) {
    rng_.seed(seed);
    layout_ = WorldLayout{};
    robot_ = RobotState{};

    auto place_disc = [&](double radius, const char* what) {
        for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
            Vec2 p = sample_point(radius);
            bool ok = true;
            for (const auto& h : layout_.hazards) ok = ok && (p - h).norm() >= radius + config_.hazard_radius;
            for (const auto& v : layout_.vases) ok = ok && (p - v).norm() >= radius + config_.vase_radius;
            if (ok) return p;
        }
        throw ConfigError(std::string("arena too crowded: could not place ") + what);
    };
    for (int i = 0; i < config_.n_hazards; ++i) layout_.hazards.push_back(place_disc(config_.hazard_radius, "hazard"));
    for (int i = 0; i < config_.n_vases; ++i) layout_.vases.push_back(place_disc(config_.vase_radius, "vase"));
    layout_.goal = sample_goal(nullptr);

    const double fp = config_.robot_footprint;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
        Vec2 p = sample_point(fp);
        bool ok = (p - layout_.goal).norm() >= config_.goal_radius + fp;
        for (const auto& h : layout_.hazards) ok = ok && (p - h).norm() > config_.hazard_radius + fp;
        for (const auto& v : layout_.vases) ok = ok && (p - v).norm() > config_.vase_radius + 2.0 * fp;
        if (ok) {
            robot_.position = p;
            placed = true;
        }
    }
    if (!placed) throw ConfigError("arena too crowded: could not place the robot");
    if (config_.robot_kind == RobotKind::car) {
        std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
        robot_.heading = wrap_angle(u(rng_));
    }

    steps_ = 0;
    started_ = true;
    return observe();
}

int Environment::cost_at(const Vec2& position) const {
    for (const auto& h : layout_.hazards)
        if ((position - h).norm() <= config_.hazard_radius) return 1;
    for (const auto& v : layout_.vases)
        if ((position - v).norm() <= config_.vase_radius + config_.robot_footprint) return 1;
    return 0;
}

StepResult Environment::step(const Action& action) {
    if (!started_) throw UsageError("step called before reset");
    if (steps_ >= config_.episode_length) throw UsageError("episode finished; call reset");
    if (action.size() != WorldConfig::action_dim)
        throw ShapeError("action must have " + std::to_string(WorldConfig::action_dim) + " components");

    const Vec2 a(std::clamp(action[0], -1.0, 1.0), std::clamp(action[1], -1.0, 1.0));
    const double dt = config_.dt;
    const double half = config_.arena_half_extent;
    const Vec2 goal_before = layout_.goal - robot_.position;
    const double dist_before = planar_norm(goal_before.x(), goal_before.y());
    const std::vector<int> slots_before = slot_assignment();

    Vec2 p = robot_.position;
    if (config_.robot_kind == RobotKind::point) {
        Vec2 v = robot_.velocity + a * dt;
        const double speed = v.norm();
        if (speed > config_.max_speed) v *= config_.max_speed / speed;
        p += v * dt;
        for (int i = 0; i < 2; ++i) {
            if (p[i] > half || p[i] < -half) {
                p[i] = std::clamp(p[i], -half, half);
                v[i] = 0.0;
            }
        }
        robot_.velocity = v;
    } else {
        robot_.speed = std::clamp(robot_.speed + a[0] * dt, -config_.max_speed, config_.max_speed);
        robot_.heading = wrap_angle(robot_.heading + a[1] * dt);
        p += robot_.speed * dt * Vec2(std::cos(robot_.heading), std::sin(robot_.heading));
        if (p.x() > half || p.x() < -half || p.y() > half || p.y() < -half) {
            p = p.cwiseMax(-half).cwiseMin(half);
            robot_.speed = 0.0;
        }
    }
    robot_.position = p;
    ++steps_;

    StepResult result;
    const Vec2 goal_after = layout_.goal - p;
    const double dist_after = planar_norm(goal_after.x(), goal_after.y());
    result.goal_reached = dist_after <= config_.goal_radius;
    result.slots_reordered = slot_assignment() != slots_before;
    result.reward = (dist_before - dist_after) + (result.goal_reached ? 1.0 : 0.0);
    result.cost = cost_at(p);
    if (result.goal_reached) layout_.goal = sample_goal(&robot_.position);
    result.done = steps_ >= config_.episode_length;
    result.next_observation = observe();
    return result;
}

std::vector<int> Environment::slot_assignment() const {
    const auto k = static_cast<std::size_t>(config_.k_nearest);
    std::vector<int> hazards = nearest_order(layout_.hazards, robot_.position);
    std::vector<int> vases = nearest_order(layout_.vases, robot_.position);
    hazards.resize(std::min(k, hazards.size()));
    vases.resize(std::min(k, vases.size()));
    hazards.push_back(-1);
    hazards.insert(hazards.end(), vases.begin(), vases.end());
    return hazards;
}

Observation Environment::observe() const {
    if (!started_) throw UsageError("observe called before reset");
    Observation obs(config_.observation_dim());
    if (config_.robot_kind == RobotKind::point) {
        obs[0] = robot_.velocity.x();
        obs[1] = robot_.velocity.y();
    } else {
        obs[0] = robot_.speed;
        obs[1] = 0.0;
    }
    Vec2 goal = layout_.goal - robot_.position;
    if (config_.robot_kind == RobotKind::car) goal = rotate_into_frame(goal, robot_.heading);
    obs[2] = goal.x();
    obs[3] = goal.y();
    const ObservationLayout lay{config_.k_nearest};
    const double sentinel = config_.sentinel_magnitude();
    write_nearest(layout_.hazards, robot_, config_.robot_kind, config_.k_nearest, sentinel, obs, lay.hazard(0));
    write_nearest(layout_.vases, robot_, config_.robot_kind, config_.k_nearest, sentinel, obs, lay.vase(0));
    return obs;
}

double true_reward(const WorldConfig& config, const Eigen::Ref<const Eigen::VectorXd>& prev,
                   const Eigen::Ref<const Eigen::VectorXd>& next) {
    const int n = config.observation_dim();
    if (prev.size() != n || next.size() != n)
        throw ShapeError("true_reward expects observations of length " + std::to_string(n));
    const double d_prev = planar_norm(prev[2], prev[3]);
    const double d_next = planar_norm(next[2], next[3]);
    return (d_prev - d_next) + (d_next <= config.goal_radius ? 1.0 : 0.0);
}

Action random_action(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Action a(WorldConfig::action_dim);
    for (int i = 0; i < WorldConfig::action_dim; ++i) a[i] = u(rng);
    return a;
}

std::string format_layout(const Environment& env, std::uint64_t episode_seed) {
    std::ostringstream os;
    os.precision(17);
    const auto& l = env.layout();
    os << "layout seed=" << episode_seed << " robot=" << to_string(env.config().robot_kind)
       << " arena=" << env.config().arena_half_extent << " goal=" << l.goal.x() << "," << l.goal.y()
       << " hazards=";
    for (std::size_t i = 0; i < l.hazards.size(); ++i)
        os << (i ? ";" : "") << l.hazards[i].x() << "," << l.hazards[i].y();
    os << " vases=";
    for (std::size_t i = 0; i < l.vases.size(); ++i) os << (i ? ";" : "") << l.vases[i].x() << "," << l.vases[i].y();
    return os.str();
}

std::string format_step_record(int step, const RobotState& robot, const Action& action, const StepResult& result) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "step=%d x=%.17g y=%.17g heading=%.17g vx=%.17g vy=%.17g speed=%.17g a0=%.17g a1=%.17g "
                  "reward=%.17g cost=%d goal_reached=%d",
                  step, robot.position.x(), robot.position.y(), robot.heading, robot.velocity.x(),
                  robot.velocity.y(), robot.speed, action[0], action[1], result.reward, result.cost,
                  result.goal_reached ? 1 : 0);
    return buf;
}

}  // namespace safe_mpc
