#include <doctest.h>

#include <cmath>
#include <random>

#include "safe_mpc/environment.hpp"
#include "safe_mpc/errors.hpp"

using namespace safe_mpc;

namespace {

WorldConfig open_world() {
    WorldConfig c = point_goal1();
    c.n_hazards = 0;
    c.n_vases = 0;
    return c;
}

Eigen::VectorXd with_goal_offset(const WorldConfig& c, double gx, double gy) {
    Eigen::VectorXd o = Eigen::VectorXd::Zero(c.observation_dim());
    o[2] = gx;
    o[3] = gy;
    return o;
}

}  // namespace

TEST_CASE("presets describe the two difficulty levels") {
    CHECK(point_goal1().n_hazards == 4);
    CHECK(point_goal1().n_vases == 1);
    CHECK(point_goal2().n_hazards == 8);
    CHECK(point_goal2().n_vases == 4);
    CHECK(car_goal1().robot_kind == RobotKind::car);
    CHECK(car_goal2().n_hazards == 8);
    CHECK(point_goal1().observation_dim() == 4 + 4 * point_goal1().k_nearest);
}

TEST_CASE("config validation") {
    WorldConfig c = point_goal1();
    c.hazard_radius = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = point_goal1();
    c.episode_length = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = point_goal1();
    c.n_vases = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero hazards pads every hazard slot with the sentinel") {
    WorldConfig c = point_goal1();
    c.n_hazards = 0;
    Environment env(c);
    const Observation o = env.reset(7);
    const ObservationLayout lay{c.k_nearest};
    for (int k = 0; k < c.k_nearest; ++k) {
        CHECK(o[lay.hazard(k)] == c.sentinel_magnitude());
        CHECK(o[lay.hazard(k) + 1] == 0.0);
    }
    // one vase: first slot real, the rest padded
    CHECK(o[lay.vase(0)] != c.sentinel_magnitude());
    CHECK(o[lay.vase(1)] == c.sentinel_magnitude());
}

TEST_CASE("reset is a pure function of the seed") {
    Environment a(point_goal2()), b(point_goal2());
    CHECK(a.reset(42) == b.reset(42));
    CHECK(a.layout().goal == b.layout().goal);
    CHECK(a.reset(42) != a.reset(43));
}

TEST_CASE("spawn is violation free and geometrically clear") {
    for (const WorldConfig& c : {point_goal1(), point_goal2(), car_goal1(), car_goal2()}) {
        Environment env(c);
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            env.reset(seed);
            const Vec2 p = env.robot().position;
            CHECK(env.cost_at(p) == 0);
            for (const auto& h : env.layout().hazards) CHECK((p - h).norm() > c.hazard_radius + c.robot_footprint);
            for (const auto& v : env.layout().vases) CHECK((p - v).norm() > c.vase_radius + c.robot_footprint);
            CHECK(std::abs(p.x()) <= c.arena_half_extent);
            CHECK(std::abs(p.y()) <= c.arena_half_extent);
        }
    }
}

TEST_CASE("crowded arena is rejected") {
    WorldConfig c = point_goal1();
    c.arena_half_extent = 0.5;
    c.n_hazards = 40;
    Environment env(c);
    CHECK_THROWS_AS(env.reset(0), ConfigError);
}

TEST_CASE("zero action from rest keeps the robot still with zero reward") {
    Environment env(point_goal1());
    env.reset(3);
    const Vec2 p0 = env.robot().position;
    const StepResult r = env.step(Action::Zero(2));
    CHECK(env.robot().position == p0);
    CHECK(r.reward == 0.0);
    CHECK(r.cost == 0);
}

TEST_CASE("stepping into a hazard costs one") {
    Environment env(point_goal1());
    env.reset(11);
    const Vec2 target = env.layout().hazards.front();
    int cost = 0;
    for (int i = 0; i < 400 && cost == 0; ++i) {
        const Vec2 to = target - env.robot().position;
        Action a(2);
        a << std::clamp(3.0 * to.x(), -1.0, 1.0), std::clamp(3.0 * to.y(), -1.0, 1.0);
        const StepResult r = env.step(a);
        cost = r.cost;
        if (cost) CHECK(env.cost_at(env.robot().position) == 1);
    }
    CHECK(cost == 1);
}

TEST_CASE("cost boundary is inclusive") {
    Environment env(point_goal1());
    env.reset(5);
    const WorldConfig& c = env.config();
    const Vec2 h = env.layout().hazards.front();
    CHECK(env.cost_at(h + Vec2(c.hazard_radius, 0.0)) == 1);
    CHECK(env.cost_at(h + Vec2(c.hazard_radius * (1.0 + 1e-9), 0.0)) == 0);
}

TEST_CASE("reaching the goal pays the bonus and relocates the goal") {
    Environment env(open_world());
    env.reset(9);
    bool reached = false;
    for (int i = 0; i < 400 && !reached; ++i) {
        const Vec2 to = env.layout().goal - env.robot().position;
        Action a(2);
        a << std::clamp(2.0 * to.x(), -1.0, 1.0), std::clamp(2.0 * to.y(), -1.0, 1.0);
        const Vec2 goal = env.layout().goal;
        const double d0 = to.norm();
        const StepResult r = env.step(a);
        if (r.goal_reached) {
            reached = true;
            const double d1 = (goal - env.robot().position).norm();
            CHECK(r.reward == doctest::Approx(d0 - d1 + 1.0).epsilon(1e-12));
            CHECK(env.layout().goal != goal);
            CHECK((env.layout().goal - env.robot().position).norm() >= env.config().goal_radius);
        }
    }
    CHECK(reached);
}

TEST_CASE("true reward examples") {
    const WorldConfig c = open_world();
    // distance 2.0 -> 1.5, outside the goal disc
    CHECK(true_reward(c, with_goal_offset(c, 2.0, 0.0), with_goal_offset(c, 1.5, 0.0)) == doctest::Approx(0.5));
    // landing on the goal centre earns progress plus the bonus
    CHECK(true_reward(c, with_goal_offset(c, 0.4, 0.0), with_goal_offset(c, 0.0, 0.0)) ==
          doctest::Approx(1.4));
    CHECK_THROWS_AS(true_reward(c, Eigen::VectorXd::Zero(3), with_goal_offset(c, 0, 0)), ShapeError);
}

TEST_CASE("dense rewards telescope when no goal is reached") {
    const WorldConfig c = open_world();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.4, 3.0);
    std::vector<Eigen::VectorXd> path;
    for (int i = 0; i < 20; ++i) path.push_back(with_goal_offset(c, u(rng), 0.0));
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) sum += true_reward(c, path[i], path[i + 1]);
    CHECK(sum == doctest::Approx(path.front()[2] - path.back()[2]).epsilon(1e-12));
}

TEST_CASE("step reward equals true reward on the observations") {
    Environment env(point_goal1());
    env.reset(21);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 400; ++i) {
        const Observation before = env.observe();
        const StepResult r = env.step(random_action(rng));
        if (r.goal_reached) continue;  // the next observation already points at the new goal
        CHECK(r.reward == true_reward(env.config(), before, r.next_observation));
    }
}

TEST_CASE("episodes run to full length regardless of violations") {
    WorldConfig c = point_goal2();
    c.episode_length = 50;
    Environment env(c);
    env.reset(4);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 49; ++i) CHECK_FALSE(env.step(random_action(rng)).done);
    CHECK(env.step(random_action(rng)).done);
    CHECK(env.needs_reset());
    CHECK_THROWS_AS(env.step(Action::Zero(2)), UsageError);
}

TEST_CASE("usage and shape errors") {
    Environment env(point_goal1());
    CHECK_THROWS_AS(env.step(Action::Zero(2)), UsageError);
    env.reset(0);
    CHECK_THROWS_AS(env.step(Action::Zero(3)), ShapeError);
}

TEST_CASE("kinematic invariants") {
    for (const WorldConfig& c : {point_goal1(), car_goal1()}) {
        Environment env(c);
        env.reset(12);
        std::mt19937_64 rng(12);
        for (int i = 0; i < c.episode_length; ++i) {
            Action a = 3.0 * random_action(rng);  // out of range on purpose; clamped
            env.step(a);
            const RobotState& s = env.robot();
            CHECK(std::abs(s.position.x()) <= c.arena_half_extent);
            CHECK(std::abs(s.position.y()) <= c.arena_half_extent);
            CHECK(s.heading > -M_PI);
            CHECK(s.heading <= M_PI);
            if (c.robot_kind == RobotKind::point) CHECK(s.velocity.norm() <= c.max_speed + 1e-12);
            else CHECK(std::abs(s.speed) <= c.max_speed);
        }
    }
}

TEST_CASE("nearest objects are sorted by distance") {
    Environment env(point_goal2());
    env.reset(8);
    std::mt19937_64 rng(8);
    const ObservationLayout lay{env.config().k_nearest};
    for (int i = 0; i < 100; ++i) {
        const Observation o = env.step(random_action(rng)).next_observation;
        for (int k = 0; k + 1 < lay.k_nearest; ++k) {
            const double a = o.segment(lay.hazard(k), 2).norm();
            const double b = o.segment(lay.hazard(k + 1), 2).norm();
            CHECK(a <= b);
        }
    }
}

TEST_CASE("car observations are expressed in the body frame") {
    WorldConfig c = car_goal1();
    Environment env(c);
    env.reset(30);
    const Observation o = env.observe();
    const Vec2 world = env.layout().goal - env.robot().position;
    const double h = env.robot().heading;
    CHECK(o[2] == doctest::Approx(std::cos(h) * world.x() + std::sin(h) * world.y()));
    CHECK(o[3] == doctest::Approx(-std::sin(h) * world.x() + std::cos(h) * world.y()));
    CHECK(Vec2(o[2], o[3]).norm() == doctest::Approx(world.norm()));
}

TEST_CASE("point robot stops at a wall") {
    WorldConfig c = open_world();
    Environment env(c);
    env.reset(2);
    Action right(2);
    right << 1.0, 0.0;
    for (int i = 0; i < 300; ++i) env.step(right);
    CHECK(env.robot().position.x() == c.arena_half_extent);
    CHECK(env.robot().velocity.x() <= c.max_speed);
}

TEST_CASE("slot reordering is flagged exactly when object offsets jump") {
    Environment env(point_goal2());
    env.reset(4);
    std::mt19937_64 rng(4);
    const ObservationLayout lay{env.config().k_nearest};
    int flagged = 0;
    for (int i = 0; i < 400; ++i) {
        const Observation before = env.observe();
        const Vec2 start = env.robot().position;
        const StepResult r = env.step(random_action(rng));
        const Vec2 moved = env.robot().position - start;
        bool smooth = true;
        for (int k = 0; k < lay.k_nearest; ++k) {
            for (int off : {lay.hazard(k), lay.vase(k)}) {
                const Vec2 expected = before.segment(off, 2) - moved;
                if ((r.next_observation.segment(off, 2) - expected).norm() > 1e-9) smooth = false;
            }
        }
        CHECK(r.slots_reordered == !smooth);
        flagged += r.slots_reordered;
    }
    CHECK(flagged > 0);
}
