// Command-line driver: run experiments, compare logged runs, replay a run.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "safe_mpc/config.hpp"
#include "safe_mpc/harness.hpp"

namespace {

using namespace safe_mpc;

std::pair<std::string, std::string> split_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + text + "'");
    return {text.substr(0, eq), text.substr(eq + 1)};
}

std::filesystem::path output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("SAFE_MPC_OUT"); env && *env) return env;
    throw UsageError("no output directory: pass --out or set SAFE_MPC_OUT");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained model-based RL experiments"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "train and evaluate agents over a seed set");
    std::vector<std::string> tasks{"point_goal1"};
    std::vector<std::string> methods{"mpc_rce"};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string out_flag;
    int jobs = 1;
    std::vector<std::string> sets;
    std::string config_file;
    bool traces = false;
    run->add_option("--task", tasks, "task preset(s): point_goal1, point_goal2, car_goal1, car_goal2")
        ->delimiter(',');
    run->add_option("--method", methods, "method(s): mpc_rce, mpc_cem, mpc_random")->delimiter(',');
    run->add_option("--seeds", seeds, "comma-separated seed list")->delimiter(',');
    run->add_option("--out", out_flag, "output directory (default: $SAFE_MPC_OUT)");
    run->add_option("--jobs", jobs, "parallel seed workers")->check(CLI::PositiveNumber);
    run->add_option("--set", sets, "configuration override key=value (repeatable)");
    run->add_option("--config", config_file, "flat key=value configuration file");
    run->add_flag("--traces", traces, "write per-step planner traces next to each run log");
    std::map<std::string, std::string> key_flags;
    for (const auto& key : config_keys()) run->add_option("--" + key, key_flags[key], "override " + key);

    // compare
    auto* compare = app.add_subcommand("compare", "aggregate logged runs into a summary table");
    std::vector<std::string> dirs;
    std::string compare_csv;
    compare->add_option("dirs", dirs, "run directories")->required();
    compare->add_option("--csv", compare_csv, "also write the table as CSV");

    // replay
    auto* replay = app.add_subcommand("replay", "re-execute a logged run and check it reproduces");
    std::string replay_out, replay_id, trajectory;
    replay->add_option("--out", replay_out, "output directory holding runs/ (default: $SAFE_MPC_OUT)");
    replay->add_option("--run-id", replay_id, "run identifier, e.g. point_goal1-mpc_rce-s0")->required();
    replay->add_option("--trajectory", trajectory, "write a line-oriented trajectory dump");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            KeyValues overrides;
            if (!config_file.empty()) overrides = read_key_values(config_file);
            for (const auto& s : sets) overrides.push_back(split_assignment(s));
            for (const auto& key : config_keys())
                if (run->count("--" + key) > 0) overrides.emplace_back(key, key_flags[key]);

            ExperimentSpec spec;
            spec.out = output_dir(out_flag);
            spec.seeds = seeds;
            spec.overrides = overrides;
            spec.jobs = jobs;
            spec.write_traces = traces;
            std::vector<std::vector<LogRow>> all_logs;
            for (const auto& t : tasks) {
                for (const auto& m : methods) {
                    spec.task = task_from_string(t);
                    spec.method = method_from_string(m);
                    run_experiment(spec);
                }
            }
            const SummaryTable table = compare_runs({spec.out});
            std::cout << table.format();
            return 0;
        }
        if (*compare) {
            std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
            const SummaryTable table = compare_runs(paths);
            std::cout << table.format();
            if (!compare_csv.empty()) {
                std::FILE* f = std::fopen(compare_csv.c_str(), "wb");
                if (!f) throw Error("cannot write " + compare_csv);
                const std::string body = table.to_csv();
                std::fwrite(body.data(), 1, body.size(), f);
                std::fclose(f);
            }
            return 0;
        }
        if (*replay) {
            const ReplayOutcome outcome = replay_run(output_dir(replay_out), replay_id, trajectory);
            std::cout << outcome.message << "\n";
            return outcome.identical ? 0 : 3;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
