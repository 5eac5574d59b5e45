#include "safe_mpc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace safe_mpc {

namespace fs = std::filesystem;

std::string to_string(TaskPreset task) {
    switch (task) {
        case TaskPreset::point_goal1: return "point_goal1";
        case TaskPreset::point_goal2: return "point_goal2";
        case TaskPreset::car_goal1: return "car_goal1";
        case TaskPreset::car_goal2: return "car_goal2";
    }
    return "unknown";
}

std::string to_string(Method method) {
    switch (method) {
        case Method::mpc_rce: return "mpc_rce";
        case Method::mpc_cem: return "mpc_cem";
        case Method::mpc_random: return "mpc_random";
    }
    return "unknown";
}

TaskPreset task_from_string(const std::string& name) {
    for (auto t : {TaskPreset::point_goal1, TaskPreset::point_goal2, TaskPreset::car_goal1, TaskPreset::car_goal2})
        if (to_string(t) == name) return t;
    throw ConfigError("unknown task '" + name + "'");
}

Method method_from_string(const std::string& name) {
    for (auto m : {Method::mpc_rce, Method::mpc_cem, Method::mpc_random})
        if (to_string(m) == name) return m;
    throw ConfigError("unknown method '" + name + "'");
}

AgentConfig default_agent_config(TaskPreset task, Method method) {
    AgentConfig cfg;
    switch (task) {
        case TaskPreset::point_goal1: cfg.world = point_goal1(); break;
        case TaskPreset::point_goal2: cfg.world = point_goal2(); break;
        case TaskPreset::car_goal1: cfg.world = car_goal1(); break;
        case TaskPreset::car_goal2: cfg.world = car_goal2(); break;
    }
    cfg.ensemble_size = cfg.world.robot_kind == RobotKind::point ? 4 : 5;
    switch (method) {
        case Method::mpc_rce: cfg.planner.mode = PlannerMode::rce; break;
        case Method::mpc_cem: cfg.planner.mode = PlannerMode::cem_penalty; break;
        case Method::mpc_random: cfg.planner.mode = PlannerMode::random; break;
    }
    return cfg;
}

std::string run_id(TaskPreset task, Method method, std::uint64_t seed) {
    return to_string(task) + "-" + to_string(method) + "-s" + std::to_string(seed);
}

AgentConfig resolve_config(const ExperimentSpec& spec, std::uint64_t seed) {
    AgentConfig cfg = default_agent_config(spec.task, spec.method);
    apply_overrides(cfg, spec.overrides);
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

std::string format_csv_row(const LogRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%llu,%s,%s,%d,%lld,%.17g,%lld,%lld", r.run_id.c_str(),
                  static_cast<unsigned long long>(r.seed), r.method.c_str(), r.task.c_str(), r.episode, r.steps_so_far,
                  r.episodic_reward, r.episodic_cost, r.cumulative_cost);
    return buf;
}

namespace {

template <typename T>
T parse_field(const std::string& file, std::size_t line, const std::string& text, const char* column) {
    std::istringstream is(text);
    T value{};
    if (text.empty() || !(is >> value) || !is.eof())
        throw ParseError(file, line, std::string("bad value '") + text + "' in column " + column);
    return value;
}

}  // namespace

std::vector<LogRow> read_run_log(const fs::path& path) {
    std::ifstream is(path);
    const std::string file = path.string();
    if (!is) throw ParseError(file, 0, "cannot open run log");
    std::string line;
    std::size_t n = 0;
    if (!std::getline(is, line)) throw ParseError(file, 1, "missing CSV header");
    ++n;
    if (line != kCsvHeader) throw ParseError(file, n, "unexpected CSV header");
    std::vector<LogRow> rows;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 9) throw ParseError(file, n, "expected 9 columns, found " + std::to_string(f.size()));
        LogRow r;
        r.run_id = f[0];
        r.seed = parse_field<std::uint64_t>(file, n, f[1], "seed");
        r.method = f[2];
        r.task = f[3];
        r.episode = parse_field<int>(file, n, f[4], "episode");
        r.steps_so_far = parse_field<long long>(file, n, f[5], "steps_so_far");
        r.episodic_reward = parse_field<double>(file, n, f[6], "episodic_reward");
        r.episodic_cost = parse_field<long long>(file, n, f[7], "episodic_cost");
        r.cumulative_cost = parse_field<long long>(file, n, f[8], "cumulative_cost");
        if (r.run_id.empty() || r.method.empty() || r.task.empty()) throw ParseError(file, n, "empty identifier column");
        if (!rows.empty() && (r.steps_so_far <= rows.back().steps_so_far || r.cumulative_cost < rows.back().cumulative_cost))
            throw ParseError(file, n, "steps and cumulative cost must be increasing");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::pair<double, double> converged_reward_cost(const std::vector<LogRow>& run) {
    if (run.empty()) return {0.0, 0.0};
    std::vector<long long> lengths;
    long long prev = 0, longest = 0;
    for (const auto& r : run) {
        lengths.push_back(r.steps_so_far - prev);
        longest = std::max(longest, r.steps_so_far - prev);
        prev = r.steps_so_far;
    }
    double reward = 0.0, cost = 0.0;
    int used = 0;
    for (std::size_t i = run.size(); i-- > 0 && used < kConvergenceEpisodes;) {
        if (i + 1 == run.size() && lengths[i] < longest) continue;
        reward += run[i].episodic_reward;
        cost += static_cast<double>(run[i].episodic_cost);
        ++used;
    }
    if (used == 0) return {run.back().episodic_reward, static_cast<double>(run.back().episodic_cost)};
    return {reward / used, cost / used};
}

double violations_within(const std::vector<LogRow>& run, long long horizon) {
    long long prev_steps = 0, prev_cum = 0;
    for (const auto& r : run) {
        if (r.steps_so_far >= horizon) {
            const double frac = static_cast<double>(horizon - prev_steps) / static_cast<double>(r.steps_so_far - prev_steps);
            return static_cast<double>(prev_cum) + frac * static_cast<double>(r.episodic_cost);
        }
        prev_steps = r.steps_so_far;
        prev_cum = r.cumulative_cost;
    }
    return static_cast<double>(prev_cum);
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace

SummaryTable summarize(const std::vector<std::vector<LogRow>>& runs) {
    std::map<std::pair<std::string, std::string>, std::vector<const std::vector<LogRow>*>> groups;
    for (const auto& run : runs)
        if (!run.empty()) groups[{run.front().task, run.front().method}].push_back(&run);

    SummaryTable table;
    for (const auto& [key, members] : groups) {
        std::vector<double> rew, cost, v10k, vtot, steps;
        for (const auto* run : members) {
            const auto [r, c] = converged_reward_cost(*run);
            rew.push_back(r);
            cost.push_back(c);
            v10k.push_back(violations_within(*run, kViolationHorizon));
            vtot.push_back(static_cast<double>(run->back().cumulative_cost));
            steps.push_back(static_cast<double>(run->back().steps_so_far));
        }
        SummaryRow row;
        row.task = key.first;
        row.method = key.second;
        row.n_runs = static_cast<int>(members.size());
        std::tie(row.reward_mean, row.reward_std) = mean_std(rew);
        std::tie(row.cost_mean, row.cost_std) = mean_std(cost);
        std::tie(row.violations_first_10k_mean, row.violations_first_10k_std) = mean_std(v10k);
        std::tie(row.total_violations_mean, row.total_violations_std) = mean_std(vtot);
        row.total_steps_mean = mean_std(steps).first;
        table.rows.push_back(row);
    }
    std::map<std::string, SummaryRow*> best;
    for (auto& row : table.rows) {
        auto it = best.find(row.task);
        if (it == best.end()) {
            best[row.task] = &row;
            continue;
        }
        const SummaryRow& b = *it->second;
        if (row.cost_mean < b.cost_mean || (row.cost_mean == b.cost_mean && row.reward_mean > b.reward_mean))
            it->second = &row;
    }
    for (auto& [task, row] : best) row->best = true;
    return table;
}

const SummaryRow* SummaryTable::find(const std::string& task, const std::string& method) const {
    for (const auto& r : rows)
        if (r.task == task && r.method == method) return &r;
    return nullptr;
}

std::string SummaryTable::format() const {
    std::string out;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-12s %-11s %4s %21s %19s %21s %21s %s\n", "task", "method", "runs",
                  "episodic_reward", "episodic_cost", "violations_first_10k", "total_violations", "best");
    out += buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-12s %-11s %4d %10.3f +- %7.3f %8.3f +- %7.3f %10.2f +- %7.2f %10.2f +- %7.2f %s\n",
                      r.task.c_str(), r.method.c_str(), r.n_runs, r.reward_mean, r.reward_std, r.cost_mean, r.cost_std,
                      r.violations_first_10k_mean, r.violations_first_10k_std, r.total_violations_mean,
                      r.total_violations_std, r.best ? "*" : "");
        out += buf;
    }
    return out;
}

std::string SummaryTable::to_csv() const {
    std::string out =
        "task,method,runs,reward_mean,reward_std,cost_mean,cost_std,violations_first_10k_mean,"
        "violations_first_10k_std,total_violations_mean,total_violations_std,total_steps_mean,best\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                      r.task.c_str(), r.method.c_str(), r.n_runs, r.reward_mean, r.reward_std, r.cost_mean, r.cost_std,
                      r.violations_first_10k_mean, r.violations_first_10k_std, r.total_violations_mean,
                      r.total_violations_std, r.total_steps_mean, r.best ? 1 : 0);
        out += buf;
    }
    return out;
}

namespace {

KeyValues run_metadata(const std::string& task, const std::string& method, std::uint64_t seed) {
    return {{"run.task", task}, {"run.method", method}, {"run.seed", std::to_string(seed)}};
}

void write_file(const fs::path& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << body;
}

/// Runs one seed and streams its CSV rows to `csv`.
RunRecord execute_run(const AgentConfig& cfg, const std::string& id, const std::string& task,
                      const std::string& method, std::ostream& csv, std::ostream* trace, const RunHooks& extra = {}) {
    csv << kCsvHeader << "\n";
    RunHooks hooks = extra;
    hooks.on_episode = [&](const EpisodeRecord& ep) {
        LogRow row{id, cfg.seed, method, task, ep.episode, ep.steps_so_far, ep.reward, ep.cost, ep.cumulative_cost};
        csv << format_csv_row(row) << "\n";
        csv.flush();
    };
    if (trace) hooks.on_trace = [trace](const std::string& lines) { *trace << lines; };
    return train_and_rollout(cfg, hooks);
}

std::vector<fs::path> find_logs(const fs::path& dir) {
    std::vector<fs::path> out;
    const fs::path runs = fs::is_directory(dir / "runs") ? dir / "runs" : dir;
    if (!fs::is_directory(runs)) throw Error("not a run directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(runs))
        if (entry.is_regular_file() && entry.path().extension() == ".csv") out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

SummaryTable run_experiment(const ExperimentSpec& spec) {
    if (spec.out.empty()) throw ConfigError("an output directory is required");
    if (spec.seeds.empty()) throw ConfigError("at least one seed is required");
    const std::string task = to_string(spec.task);
    const std::string method = to_string(spec.method);
    for (std::uint64_t s : spec.seeds) resolve_config(spec, s);  // reject bad overrides before any work

    const fs::path runs_dir = spec.out / "runs";
    fs::create_directories(runs_dir);

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t i = next++; i < spec.seeds.size(); i = next++) {
            try {
                const std::uint64_t seed = spec.seeds[i];
                const AgentConfig cfg = resolve_config(spec, seed);
                const std::string id = run_id(spec.task, spec.method, seed);
                KeyValues meta = run_metadata(task, method, seed);
                const KeyValues resolved = dump_config(cfg);
                meta.insert(meta.end(), resolved.begin(), resolved.end());
                write_file(runs_dir / (id + ".cfg"), format_key_values(meta));

                std::ofstream csv(runs_dir / (id + ".csv"), std::ios::binary);
                std::ofstream trace_file;
                if (spec.write_traces) trace_file.open(runs_dir / (id + ".trace"), std::ios::binary);
                const RunRecord rec =
                    execute_run(cfg, id, task, method, csv, spec.write_traces ? &trace_file : nullptr);

                std::ostringstream timing;
                timing << "episode,wall_clock_seconds\n";
                for (const auto& ep : rec.episodes) timing << ep.episode << "," << ep.wall_clock_seconds << "\n";
                write_file(runs_dir / (id + ".timing"), timing.str());
                if (rec.aborted) write_file(runs_dir / (id + ".error"), rec.diagnostic + "\n");
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(spec.jobs, static_cast<int>(spec.seeds.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<std::vector<LogRow>> logs;
    for (std::uint64_t s : spec.seeds) logs.push_back(read_run_log(runs_dir / (run_id(spec.task, spec.method, s) + ".csv")));
    SummaryTable table = summarize(logs);

    std::string summary = table.format();
    summary += "\n# resolved configuration (" + task + ", " + method + ")\n";
    summary += format_key_values(dump_config(resolve_config(spec, spec.seeds.front())));
    summary += "# seeds:";
    for (auto s : spec.seeds) summary += " " + std::to_string(s);
    summary += "\n";
    const std::string stem = "summary_" + task + "_" + method;
    write_file(spec.out / (stem + ".txt"), summary);
    write_file(spec.out / (stem + ".csv"), table.to_csv());
    return table;
}

SummaryTable compare_runs(const std::vector<fs::path>& dirs) {
    std::vector<std::vector<LogRow>> logs;
    for (const auto& d : dirs)
        for (const auto& p : find_logs(d)) logs.push_back(read_run_log(p));
    if (logs.empty()) throw Error("no run logs found");
    return summarize(logs);
}

ReplayOutcome replay_run(const fs::path& out_dir, const std::string& id, const fs::path& trajectory_path) {
    const fs::path runs = fs::is_directory(out_dir / "runs") ? out_dir / "runs" : out_dir;
    const KeyValues kv = read_key_values((runs / (id + ".cfg")).string());
    std::string task, method;
    std::uint64_t seed = 0;
    KeyValues overrides;
    for (const auto& [k, v] : kv) {
        if (k == "run.task") task = v;
        else if (k == "run.method") method = v;
        else if (k == "run.seed") seed = std::stoull(v);
        else overrides.emplace_back(k, v);
    }
    if (task.empty() || method.empty()) throw ConfigError("run config lacks run.task or run.method");
    AgentConfig cfg = default_agent_config(task_from_string(task), method_from_string(method));
    apply_overrides(cfg, overrides);
    cfg.seed = seed;

    std::ofstream traj;
    RunHooks hooks;
    if (!trajectory_path.empty()) {
        traj.open(trajectory_path, std::ios::binary);
        if (!traj) throw Error("cannot write " + trajectory_path.string());
        hooks.on_layout = [&](const std::string& line) { traj << line << "\n"; };
        hooks.on_step = [&](const StepEvent& ev) {
            traj << format_step_record(static_cast<int>(ev.env_step), ev.robot, ev.action, ev.result) << "\n";
        };
    }
    std::ostringstream regenerated;
    execute_run(cfg, id, task, method, regenerated, nullptr, hooks);

    std::ifstream is(runs / (id + ".csv"), std::ios::binary);
    std::stringstream stored;
    stored << is.rdbuf();
    ReplayOutcome out;
    out.identical = stored.str() == regenerated.str();
    out.message = out.identical ? "replay of " + id + " reproduced the logged episodes exactly"
                                : "replay of " + id + " diverged from the logged episodes";
    return out;
}

}  // namespace safe_mpc
