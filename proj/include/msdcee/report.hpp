#pragma once

// Campaign and verification artifacts: steps.csv, summary.json, verify.json.

#include "msdcee/config.hpp"
#include "msdcee/harness.hpp"

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

namespace msdcee {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline constexpr const char* kStepsHeader = "run_id,t,x,y,reading,mean_x,mean_y,trace_P,J,J_ET,J_ER,feasible";

/// One row per step per run. Planning columns are empty on a run's last step.
inline void write_steps_csv(std::ostream& os, const std::vector<RunRecord>& records) {
    os << kStepsHeader << '\n';
    for (const auto& r : records) {
        const std::string id = r.id();
        for (const auto& st : r.steps) {
            os << id << ',' << st.t << ',' << fmt_double(st.position.x()) << ',' << fmt_double(st.position.y()) << ','
               << fmt_double(st.reading) << ',' << fmt_double(st.mean.x()) << ',' << fmt_double(st.mean.y()) << ','
               << fmt_double(st.trace_p) << ',';
            if (st.planned) {
                os << fmt_double(st.cost) << ',' << fmt_double(st.tracking) << ',' << fmt_double(st.uncertainty) << ','
                   << (st.feasible ? 1 : 0);
            } else {
                os << ",,,";
            }
            os << '\n';
        }
    }
}

inline json to_json(const CellSummary& c) {
    json j{{"planner", c.planner},
           {"scenario", c.scenario},
           {"runs", c.runs},
           {"success_rate", c.success_rate},
           {"mean_final_error", c.mean_final_error},
           {"final_rmse", c.final_rmse},
           {"rmse_curve", c.rmse_curve}};
    j["mean_arrival_time"] = c.mean_arrival_time ? json(*c.mean_arrival_time) : json(nullptr);
    return j;
}

inline json campaign_summary_json(const CampaignResult& result, const RootConfig& config) {
    json cells = json::array();
    for (const auto& c : result.cells) cells.push_back(to_json(c));
    json events = json::array();
    for (const auto& r : result.records) {
        std::size_t infeasible = 0;
        for (const auto& st : r.steps) infeasible += st.planned && st.terminal_enforced && !st.feasible;
        if (!r.events.empty()) {
            events.push_back({{"run_id", r.id()}, {"count", r.events.size()}, {"infeasible_steps", infeasible}});
        }
    }
    const auto p99 = mean_shift_quantile(result.records, 0.99);
    return json{{"schema_version", kSchemaVersion},
                {"cells", cells},
                {"events", events},
                {"mean_shift_p99", p99 ? json(*p99) : json(nullptr)},
                {"config", to_json(config)}};
}

inline json to_json(const TerminalIngredients& t) {
    json checks = json::array();
    for (const auto& c : t.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}});
    return json{{"K", detail::mat_to_json(t.K)},
                {"S", detail::mat_to_json(t.S)},
                {"radius", t.radius},
                {"uncapped_radius", t.uncapped_radius},
                {"g", t.delta_bound},
                {"input_half_width", t.input_half_width},
                {"checks", checks},
                {"passed", t.all_passed()}};
}

inline json to_json(const CheckViolation& v) {
    return json{{"t", v.t}, {"kind", v.kind}, {"lhs", v.lhs}, {"rhs", v.rhs}};
}

inline json to_json(const DescentReport& r) {
    json v = json::array();
    for (const auto& x : r.violations) v.push_back(to_json(x));
    json j{{"checked", r.checked},
           {"contraction_checked", r.contraction_checked},
           {"level_set_checked", r.omega_checked},
           {"w_valid", r.w_valid},
           {"level_set", r.omega_level},
           {"violations", v},
           {"passed", r.passed()}};
    j["entered_level_set_at"] = r.entered_omega ? json(*r.entered_omega) : json(nullptr);
    return j;
}

inline json to_json(const FeasibilityReport& r) {
    json v = json::array();
    for (const auto& x : r.violations) v.push_back(to_json(x));
    if (!r.applicable) return json{{"status", "n/a"}, {"checked", 0}, {"violations", v}};
    return json{{"status", r.passed() ? "pass" : "fail"}, {"checked", r.checked}, {"violations", v}};
}

struct VerifyOutcome {
    json report;
    bool passed = false;
    bool validated = false;  // terminal ingredients built; no episodes run otherwise
};

/// Oracle-mode episodes with exhaustive search, checked for recursive
/// feasibility and descent. Terminal-ingredient failures are reported, not thrown.
inline VerifyOutcome run_verification(const RootConfig& c, std::optional<int> horizon = std::nullopt) {
    VerifyOutcome out;
    out.report = json{{"schema_version", kSchemaVersion}, {"config", to_json(c)}};
    RunSettings settings;
    try {
        settings = build_run_settings(c);
        if (!settings.terminal) throw ConfigError("verify: terminal ingredients are disabled in the config");
    } catch (const std::exception& e) {
        out.report["terminal"] = {{"passed", false}, {"error", e.what()}};
        out.report["episodes"] = json::array();
        out.report["passed"] = false;
        return out;
    }
    out.validated = true;
    out.report["terminal"] = to_json(*settings.terminal);
    bool passed = settings.terminal->all_passed();

    settings.oracle_mean = true;
    settings.price_shifted = true;
    settings.estimator.particles = c.verify.particles;
    ScenarioConfig sc = c.scenarios.at(c.verify.scenario);
    sc.max_steps = c.verify.max_steps;
    sc.success_radius = -1.0;  // no early stop: the checks need the steps spent holding near the source
    PlannerSpec spec;
    spec.name = "ms_dcee";
    spec.kind = "ms_dcee";
    spec.horizon = horizon.value_or(c.verify.horizon);
    spec.search.strategy = SearchStrategy::exhaustive;
    for (const auto& p : c.planners) {
        if (!p.scripted() && planner_kind_from_string(p.kind) == PlannerKind::ms_dcee) {
            spec.scenarios = p.scenarios;
            spec.rollout_particles = p.rollout_particles;
        }
    }

    const CampaignResult result = run_campaign({sc}, {spec}, settings, c.verify.episodes, c.seed, c.jobs);
    const double half = settings.terminal->input_half_width;
    json episodes = json::array();
    for (const auto& r : result.records) {
        const Mat2 W = empirical_w(r, c.verify.w_inflation);
        const DescentReport d = check_descent(r, W, settings.weights, settings.terminal->K, half, sc.domain);
        const FeasibilityReport f = check_recursive_feasibility(r, *settings.terminal, sc.domain, half);
        passed = passed && d.passed() && f.passed() && f.applicable;
        episodes.push_back({{"run_id", r.id()},
                            {"seed", r.seed},
                            {"steps", r.steps.size()},
                            {"W", detail::mat_to_json(W)},
                            {"descent", to_json(d)},
                            {"recursive_feasibility", to_json(f)}});
    }
    out.report["episodes"] = episodes;
    out.report["passed"] = passed;
    out.passed = passed;
    return out;
}

}  // namespace msdcee
