#include "safe_mpc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace safe_mpc {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    std::from_chars_result res;
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is unavailable on older toolchains
        char* end = nullptr;
        value = std::strtod(text.c_str(), &end);
        res.ptr = end;
        res.ec = (text.empty() || end != last) ? std::errc::invalid_argument : std::errc{};
    } else {
        res = std::from_chars(first, last, value);
    }
    if (res.ec != std::errc{} || res.ptr != last)
        throw ConfigError("invalid value '" + text + "' for key " + key);
    return value;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Entry {
    const char* key;
    std::function<void(AgentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const AgentConfig&)> get;
};

#define SAFE_MPC_NUM(KEY, FIELD, TYPE)                                                                         \
    Entry {                                                                                                    \
        KEY, [](AgentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<TYPE>(k, v); }, \
            [](const AgentConfig& c) {                                                                         \
                if constexpr (std::is_floating_point_v<TYPE>) return fmt(static_cast<double>(c.FIELD));         \
                else return std::to_string(c.FIELD);                                                           \
            }                                                                                                  \
    }

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        SAFE_MPC_NUM("env.arena_half_extent", world.arena_half_extent, double),
        SAFE_MPC_NUM("env.n_hazards", world.n_hazards, int),
        SAFE_MPC_NUM("env.n_vases", world.n_vases, int),
        SAFE_MPC_NUM("env.hazard_radius", world.hazard_radius, double),
        SAFE_MPC_NUM("env.vase_radius", world.vase_radius, double),
        SAFE_MPC_NUM("env.goal_radius", world.goal_radius, double),
        SAFE_MPC_NUM("env.robot_footprint", world.robot_footprint, double),
        Entry{"env.robot_kind",
              [](AgentConfig& c, const std::string&, const std::string& v) { c.world.robot_kind = robot_kind_from_string(v); },
              [](const AgentConfig& c) { return to_string(c.world.robot_kind); }},
        SAFE_MPC_NUM("env.episode_length", world.episode_length, int),
        SAFE_MPC_NUM("env.k_nearest", world.k_nearest, int),
        SAFE_MPC_NUM("env.seed", world.seed, std::uint64_t),
        SAFE_MPC_NUM("env.dt", world.dt, double),
        SAFE_MPC_NUM("env.max_speed", world.max_speed, double),

        SAFE_MPC_NUM("agent.init_random_steps", init_random_steps, int),
        SAFE_MPC_NUM("agent.retrain_interval", retrain_interval, int),
        SAFE_MPC_NUM("agent.total_steps", total_steps, int),
        SAFE_MPC_NUM("agent.max_safe_ratio", max_safe_ratio, double),
        SAFE_MPC_NUM("agent.safe_buffer_capacity", safe_buffer_capacity, std::size_t),
        SAFE_MPC_NUM("agent.unsafe_buffer_capacity", unsafe_buffer_capacity, std::size_t),

        Entry{"planner.mode",
              [](AgentConfig& c, const std::string&, const std::string& v) { c.planner.mode = planner_mode_from_string(v); },
              [](const AgentConfig& c) { return to_string(c.planner.mode); }},
        SAFE_MPC_NUM("planner.n_samples", planner.n_samples, int),
        SAFE_MPC_NUM("planner.n_elites", planner.n_elites, int),
        SAFE_MPC_NUM("planner.horizon", planner.horizon, int),
        SAFE_MPC_NUM("planner.gamma", planner.gamma, double),
        SAFE_MPC_NUM("planner.beta", planner.beta, double),
        SAFE_MPC_NUM("planner.penalty", planner.penalty, double),
        SAFE_MPC_NUM("planner.max_iters", planner.max_iters, int),
        SAFE_MPC_NUM("planner.var_stop_epsilon", planner.var_stop_epsilon, double),
        SAFE_MPC_NUM("planner.init_variance", planner.init_variance, double),
        SAFE_MPC_NUM("planner.random_n_samples", planner.random_n_samples, int),

        SAFE_MPC_NUM("dynamics.ensemble_size", ensemble_size, int),
        Entry{"dynamics.hidden",
              [](AgentConfig& c, const std::string& k, const std::string& v) { c.dynamics_hidden = parse_int_list(k, v); },
              [](const AgentConfig& c) { return join(c.dynamics_hidden); }},
        SAFE_MPC_NUM("dynamics.batch_size", dynamics_train.batch_size, int),
        SAFE_MPC_NUM("dynamics.learning_rate", dynamics_train.learning_rate, double),
        SAFE_MPC_NUM("dynamics.epochs", dynamics_train.epochs, int),
        SAFE_MPC_NUM("dynamics.subsample_fraction", dynamics_train.subsample_fraction, double),
        SAFE_MPC_NUM("dynamics.adam_beta1", dynamics_train.adam_beta1, double),
        SAFE_MPC_NUM("dynamics.adam_beta2", dynamics_train.adam_beta2, double),
        SAFE_MPC_NUM("dynamics.adam_epsilon", dynamics_train.adam_epsilon, double),

        SAFE_MPC_NUM("classifier.n_estimators", classifier.n_estimators, int),
        SAFE_MPC_NUM("classifier.max_depth", classifier.max_depth, int),
        SAFE_MPC_NUM("classifier.max_leaves", classifier.max_leaves, int),
        SAFE_MPC_NUM("classifier.learning_rate", classifier.learning_rate, double),
        SAFE_MPC_NUM("classifier.min_samples_leaf", classifier.min_samples_leaf, int),
        SAFE_MPC_NUM("classifier.decision_threshold", classifier.decision_threshold, double),
        SAFE_MPC_NUM("classifier.l2_regularization", classifier.l2_regularization, double),
        SAFE_MPC_NUM("classifier.min_child_hessian", classifier.min_child_hessian, double),
    };
    return entries;
}

#undef SAFE_MPC_NUM

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void apply_override(AgentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& e : registry()) {
        if (key == e.key) {
            e.set(cfg, key, value);
            return;
        }
    }
    throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_overrides(AgentConfig& cfg, const KeyValues& overrides) {
    for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
}

KeyValues dump_config(const AgentConfig& cfg) {
    KeyValues out;
    for (const auto& e : registry()) out.emplace_back(e.key, e.get(cfg));
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& e : registry()) keys.emplace_back(e.key);
    return keys;
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
    KeyValues out;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0) throw ParseError(source, n, "expected key=value");
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

KeyValues read_key_values(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_key_values(ss.str(), path);
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

}  // namespace safe_mpc
