// msdcee: run campaigns, planner comparisons and guarantee checks from a JSON config.

#include "msdcee/msdcee.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace msdcee;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::string> out_dir;
    std::vector<std::string> planners;
    std::optional<int> horizon;
    bool verbose = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App& app, Options& o) {
    app.add_option("--config", o.config, "experiment config (JSON)")->required();
    app.add_option("--seed", o.seed, "root seed, overrides the config");
    app.add_option("--jobs", o.jobs, "worker threads for episodes");
    app.add_option("--out-dir", o.out_dir, "output directory");
    app.add_option("--planner", o.planners, "only run these planners (by name or kind)")->delimiter(',');
    app.add_option("--horizon", o.horizon, "override the horizon of every planner");
    app.add_flag("--verbose", o.verbose, "JSON-lines progress on stderr");
    app.add_option("--set", o.overrides, "config override key.path=value (repeatable)");
}

RootConfig resolve(const Options& o) {
    RootConfig c = load_config(o.config, o.overrides);
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) {
        if (*o.jobs < 1) throw ConfigError("--jobs must be >= 1");
        c.jobs = *o.jobs;
    }
    if (o.out_dir) c.out_dir = *o.out_dir;
    if (o.verbose) c.verbose = true;
    if (!o.planners.empty()) {
        std::vector<PlannerSpec> keep;
        for (const auto& want : o.planners) {
            bool found = false;
            for (const auto& p : c.planners) {
                if (p.name == want) {
                    keep.push_back(p);
                    found = true;
                }
            }
            if (!found) {
                PlannerSpec p;
                p.kind = want;
                p.name = want;
                if (!p.scripted()) planner_kind_from_string(want);
                keep.push_back(p);
            }
        }
        c.planners = keep;
    }
    if (o.horizon) {
        if (*o.horizon < 1) throw ConfigError("--horizon must be >= 1");
        for (auto& p : c.planners) p.horizon = *o.horizon;
    }
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

void log_line(const RootConfig& c, const json& j) {
    if (c.verbose) std::cerr << j.dump() << '\n';
}

void log_records(const RootConfig& c, const CampaignResult& result) {
    if (!c.verbose) return;
    for (const auto& r : result.records) {
        log_line(c, {{"event", "episode"},
                     {"run_id", r.id()},
                     {"seed", r.seed},
                     {"steps", r.steps.size()},
                     {"success", r.success},
                     {"final_error", r.final_error}});
    }
}

CampaignResult execute(const RootConfig& c, const RunSettings& settings) {
    log_line(c, {{"event", "campaign_start"},
                 {"scenarios", c.scenarios.size()},
                 {"planners", c.planners.size()},
                 {"runs", c.runs},
                 {"seed", c.seed}});
    CampaignResult result = run_campaign(c.scenarios, c.planners, settings, c.runs, c.seed, c.jobs);
    log_records(c, result);
    return result;
}

void write_campaign(const RootConfig& c, const CampaignResult& result, const json& extra = {}) {
    const fs::path dir(c.out_dir);
    fs::create_directories(dir);
    std::ostringstream csv;
    write_steps_csv(csv, result.records);
    write_text(dir / "steps.csv", csv.str());
    json summary = campaign_summary_json(result, c);
    for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
    write_text(dir / "summary.json", summary.dump(2) + "\n");
}

int cmd_run(const Options& o) {
    const RootConfig c = resolve(o);
    const RunSettings settings = build_run_settings(c);
    const CampaignResult result = execute(c, settings);
    write_campaign(c, result);
    return 0;
}

int cmd_compare(const Options& o) {
    RootConfig c = resolve(o);
    if (o.planners.empty()) {
        // Make sure the four planners are present, keeping configured specs.
        for (const char* kind : {"ms_dcee", "smpc", "ipp", "dcee"}) {
            bool have = false;
            for (const auto& p : c.planners) {
                have = have || (!p.scripted() && planner_kind_from_string(p.kind) == planner_kind_from_string(kind));
            }
            if (!have) {
                PlannerSpec p;
                p.kind = kind;
                p.name = kind;
                if (o.horizon) p.horizon = *o.horizon;
                c.planners.push_back(p);
            }
        }
    }
    const RunSettings settings = build_run_settings(c);
    const CampaignResult result = execute(c, settings);

    json table = json::array();
    std::printf("%-14s %-14s %8s %14s %12s\n", "planner", "scenario", "success", "mean_arrival", "final_rmse");
    for (const auto& cell : result.cells) {
        table.push_back({{"planner", cell.planner},
                         {"scenario", cell.scenario},
                         {"success_rate", cell.success_rate},
                         {"mean_arrival_time", cell.mean_arrival_time ? json(*cell.mean_arrival_time) : json(nullptr)},
                         {"final_rmse", cell.final_rmse}});
        const std::string arrival = cell.mean_arrival_time ? std::to_string(*cell.mean_arrival_time) : "-";
        std::printf("%-14s %-14s %8.3f %14s %12.4f\n", cell.planner.c_str(), cell.scenario.c_str(), cell.success_rate,
                    arrival.c_str(), cell.final_rmse);
    }
    write_campaign(c, result, {{"comparison", table}});
    return 0;
}

int cmd_verify(const Options& o) {
    const RootConfig c = resolve(o);
    const fs::path dir(c.out_dir);
    fs::create_directories(dir);
    const VerifyOutcome v = run_verification(c, o.horizon);
    write_text(dir / "verify.json", v.report.dump(2) + "\n");
    if (!v.validated) {
        std::cerr << "msdcee: terminal ingredient validation failed: " << v.report["terminal"]["error"].get<std::string>()
                  << '\n';
        return 1;
    }
    log_line(c, {{"event", "verify"}, {"episodes", v.report["episodes"].size()}, {"passed", v.passed}});
    return v.passed ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MS-DCEE plume source search: campaigns, comparisons and guarantee checks"};
    app.require_subcommand(1);
    Options run_opts, cmp_opts, ver_opts;
    CLI::App* run = app.add_subcommand("run", "run the configured campaign, write steps.csv and summary.json");
    CLI::App* cmp = app.add_subcommand("compare", "run MS-DCEE, SMPC, IPP and DCEE on identical seeds");
    CLI::App* ver = app.add_subcommand("verify", "oracle-mode episodes with feasibility and descent checks");
    add_common(*run, run_opts);
    add_common(*cmp, cmp_opts);
    add_common(*ver, ver_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run) return cmd_run(run_opts);
        if (*cmp) return cmd_compare(cmp_opts);
        if (*ver) return cmd_verify(ver_opts);
    } catch (const ConfigError& e) {
        std::cerr << "msdcee: config error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "msdcee: config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "msdcee: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
