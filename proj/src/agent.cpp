#include "safe_mpc/agent.hpp"

#include <chrono>
#include <optional>

#include "safe_mpc/rng.hpp"

namespace safe_mpc {

namespace {

enum StreamTag : std::uint64_t {
    kEpisodeStream = 1,
    kActionStream,
    kInitStream,
    kDynamicsFitStream,
    kClassifierFitStream,
    kPlanStream,
};

/// Steps the environment, handles episode resets, and keeps the buffers and
/// per-episode metrics of a run.
class Runner {
public:
    Runner(const AgentConfig& cfg, const RunHooks& hooks)
        : cfg_(cfg), hooks_(hooks), env_(cfg.world),
          buffer_(cfg.max_safe_ratio, cfg.safe_buffer_capacity, cfg.unsafe_buffer_capacity),
          start_(std::chrono::steady_clock::now()) {
        record_.seed = cfg.seed;
        record_.config = cfg;
    }

    /// Resets when needed; returns true if a new episode started.
    bool ensure_episode() {
        if (!env_.needs_reset()) return false;
        const auto s = episode_seed(cfg_.seed, cfg_.world.seed, episode_);
        env_.reset(s);
        if (hooks_.on_layout) hooks_.on_layout(format_layout(env_, s));
        return true;
    }

    const StepResult& act(const Action& action, bool planned, int model_version, const Eigen::VectorXd& plan) {
        Observation obs = env_.observe();
        last_ = env_.step(action);
        Transition t{obs, action, last_.next_observation, last_.cost,
                     last_.goal_reached || last_.slots_reordered};
        if (!t.reset) transitions_.push_back(t);
        buffer_.ingest(last_.next_observation, last_.cost);

        ep_reward_ += last_.reward;
        ep_cost_ += last_.cost;
        record_.cumulative_cost += last_.cost;
        ++steps_;
        if (hooks_.on_step) {
            StepEvent ev;
            ev.env_step = steps_ - 1;
            ev.planned = planned;
            ev.model_version = model_version;
            ev.observation = std::move(obs);
            ev.plan = plan;
            ev.action = action;
            ev.result = last_;
            ev.robot = env_.robot();
            hooks_.on_step(ev);
        }
        if (last_.done) close_episode();
        return last_;
    }

    void close_episode() {
        EpisodeRecord ep;
        ep.episode = episode_;
        ep.steps_so_far = steps_;
        ep.reward = ep_reward_;
        ep.cost = ep_cost_;
        ep.cumulative_cost = record_.cumulative_cost;
        ep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        record_.episodes.push_back(ep);
        if (hooks_.on_episode) hooks_.on_episode(ep);
        ++episode_;
        ep_reward_ = 0.0;
        ep_cost_ = 0;
    }

    RunRecord finish() {
        if (env_.steps_elapsed() > 0 && !env_.needs_reset()) close_episode();
        record_.total_env_steps = steps_;
        record_.dynamics_buffer_size = transitions_.size();
        record_.safe_buffer_size = buffer_.safe().size();
        record_.unsafe_buffer_size = buffer_.unsafe().size();
        return std::move(record_);
    }

    Environment& env() { return env_; }
    const std::vector<Transition>& transitions() const { return transitions_; }
    const DualBuffer& buffer() const { return buffer_; }
    RunRecord& record() { return record_; }
    long long steps() const { return steps_; }

private:
    const AgentConfig& cfg_;
    const RunHooks& hooks_;
    Environment env_;
    std::vector<Transition> transitions_;
    DualBuffer buffer_;
    RunRecord record_;
    StepResult last_;
    int episode_ = 0;
    long long steps_ = 0;
    double ep_reward_ = 0.0;
    long long ep_cost_ = 0;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

void AgentConfig::validate() const {
    world.validate();
    planner.validate();
    dynamics_train.validate();
    classifier.validate();
    if (init_random_steps < 1) throw ConfigError("init_random_steps must be at least 1");
    if (retrain_interval < 1) throw ConfigError("retrain_interval must be at least 1");
    if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
    if (ensemble_size < 1) throw ConfigError("ensemble_size must be at least 1");
    if (planner.action_dim != WorldConfig::action_dim) throw ConfigError("planner action_dim must match the world");
    for (int h : dynamics_hidden)
        if (h < 1) throw ConfigError("dynamics hidden widths must be positive");
    if (!(max_safe_ratio > 0.0)) throw ConfigError("max_safe_ratio must be positive");
}

std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t world_seed, int episode) {
    return derive_seed(run_seed, {kEpisodeStream, world_seed, static_cast<std::uint64_t>(episode)});
}

std::vector<Transition> collect_random(Environment& env, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("collect_random needs n >= 1");
    Rng rng(derive_seed(seed, {kActionStream}));
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(n));
    int episode = 0;
    for (int i = 0; i < n; ++i) {
        if (env.needs_reset()) env.reset(episode_seed(seed, env.config().seed, episode++));
        Observation obs = env.observe();
        Action a = random_action(rng);
        StepResult r = env.step(a);
        out.push_back({std::move(obs), std::move(a), r.next_observation, r.cost,
                       r.goal_reached || r.slots_reordered});
    }
    return out;
}

RunRecord train_and_rollout(const AgentConfig& cfg, const RunHooks& hooks) {
    cfg.validate();
    Runner run(cfg, hooks);
    const Eigen::VectorXd no_plan;

    Rng action_rng(derive_seed(cfg.seed, {kActionStream}));
    for (int i = 0; i < cfg.init_random_steps; ++i) {
        run.ensure_episode();
        run.act(random_action(action_rng), false, 0, no_plan);
    }
    if (cfg.total_steps == 0) return run.finish();

    const int obs_dim = cfg.world.observation_dim();
    EnsembleDynamicsModel dynamics(obs_dim, WorldConfig::action_dim, cfg.ensemble_size, cfg.dynamics_hidden,
                                   derive_seed(cfg.seed, {kInitStream}));
    GbdtModel classifier;
    int version = 0;
    const WorldConfig world = cfg.world;
    const StateReward reward = [world](const Eigen::Ref<const Eigen::VectorXd>& prev,
                                       const Eigen::Ref<const Eigen::VectorXd>& next) {
        return true_reward(world, prev, next);
    };

    std::optional<Eigen::VectorXd> previous_plan;
    for (int p = 0; p < cfg.total_steps; ++p) {
        if (p % cfg.retrain_interval == 0) {
            try {
                dynamics.fit(run.transitions(), cfg.dynamics_train,
                             derive_seed(cfg.seed, {kDynamicsFitStream, static_cast<std::uint64_t>(version)}));
                classifier = fit_classifier(cfg.classifier, run.buffer(),
                                            derive_seed(cfg.seed, {kClassifierFitStream, static_cast<std::uint64_t>(version)}));
            } catch (const Error& e) {
                throw RunError(run.steps(), e.what());
            }
            ++version;
            run.record().retrain_steps.push_back(run.steps());
            if (!hooks.checkpoint_dir.empty() && version % std::max(1, hooks.checkpoint_every) == 0) {
                std::filesystem::create_directories(hooks.checkpoint_dir);
                const std::string tag = "v" + std::to_string(version);
                dynamics.save(hooks.checkpoint_dir / ("dynamics_" + tag + ".bin"));
                classifier.save(hooks.checkpoint_dir / ("classifier_" + tag + ".txt"));
            }
        }
        if (run.ensure_episode()) previous_plan.reset();

        const Observation s0 = run.env().observe();
        const TrajectoryEvaluator evaluator(dynamics, classifier, reward, s0, WorldConfig::action_dim,
                                            cfg.planner.gamma, cfg.planner.cost_discount());
        const PlanDistribution init = previous_plan ? warm_start(*previous_plan, cfg.planner) : cold_start(cfg.planner);
        SolveResult plan;
        try {
            plan = solve(cfg.planner, init, std::cref(evaluator),
                         derive_seed(cfg.seed, {kPlanStream, static_cast<std::uint64_t>(p)}));
        } catch (const Error& e) {
            RunRecord rec = run.finish();
            rec.aborted = true;
            rec.diagnostic = "planner failure at environment step " + std::to_string(rec.total_env_steps) + ": " + e.what();
            return rec;
        }
        if (hooks.on_trace) hooks.on_trace(format_trace(plan.trace, run.steps()));
        const Action action = plan.sequence.head(WorldConfig::action_dim);
        run.act(action, true, version, plan.sequence);
        previous_plan = plan.sequence;
    }
    return run.finish();
}

}  // namespace safe_mpc
