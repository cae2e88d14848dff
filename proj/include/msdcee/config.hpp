#pragma once

// Experiment configuration: JSON load/save, command-line overrides and the
// translation into RunSettings (including the terminal ingredients).

#include "msdcee/harness.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace msdcee {

inline constexpr int kSchemaVersion = 1;

using json = nlohmann::json;

struct TerminalSpec {
    bool enabled = true;
    bool derive_gain = true;  // K = -(S + R)^{-1} S from the configured S
    Mat2 K = -0.618 * Mat2::Identity();
    double delta_bound = 0.5;       // g
    double input_half_width = 0.0;  // 0: use the action step
    double mean_margin = 2.5;

    bool operator==(const TerminalSpec& o) const {
        return enabled == o.enabled && derive_gain == o.derive_gain && K == o.K && delta_bound == o.delta_bound &&
               input_half_width == o.input_half_width && mean_margin == o.mean_margin;
    }
};

struct WeightSpec {
    Mat2 Q = 100.0 * Mat2::Identity();
    Mat2 R = 100.0 * Mat2::Identity();
    Mat2 S = 161.8 * Mat2::Identity();
    bool s_from_lyapunov = false;  // S solved from K instead of given

    bool operator==(const WeightSpec& o) const {
        return Q == o.Q && R == o.R && S == o.S && s_from_lyapunov == o.s_from_lyapunov;
    }
};

struct VerifySpec {
    int episodes = 5;
    int horizon = 2;
    int max_steps = 60;
    double w_inflation = 1.0;
    std::size_t particles = 2000;
    std::size_t scenario = 0;  // index into RootConfig::scenarios

    bool operator==(const VerifySpec&) const = default;
};

struct RootConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 1;
    int runs = 30;
    int jobs = 1;
    std::string out_dir = "out";
    bool verbose = false;
    std::vector<ScenarioConfig> scenarios;
    std::vector<PlannerSpec> planners;
    WeightSpec weights;
    TerminalSpec terminal;
    EstimatorConfig estimator;
    double step = 2.0;
    DiagonalMode diagonal = DiagonalMode::normalized;
    double delta_max = 4.0;
    VerifySpec verify;
};

namespace detail {

inline json mat_to_json(const Mat2& m) { return json::array({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}); }

inline Mat2 mat_from_json(const json& j, const char* what) {
    if (j.is_number()) return j.get<double>() * Mat2::Identity();
    if (j.is_array() && j.size() == 2 && j[0].is_array() && j[0].size() == 2 && j[1].size() == 2) {
        Mat2 m;
        m << j[0][0].get<double>(), j[0][1].get<double>(), j[1][0].get<double>(), j[1][1].get<double>();
        return m;
    }
    throw ConfigError(std::string(what) + ": expected a number or a 2x2 matrix");
}

inline json vec_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
inline json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec2 vec2_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(what) + ": expected [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline Vec3 vec3_from_json(const json& j, const char* what) {
    if (!j.is_array() || (j.size() != 3 && j.size() != 2)) throw ConfigError(std::string(what) + ": expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j.size() == 3 ? j[2].get<double>() : 0.0};
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::string strategy_name(SearchStrategy s) {
    switch (s) {
        case SearchStrategy::automatic: return "auto";
        case SearchStrategy::exhaustive: return "exhaustive";
        case SearchStrategy::sampled: return "sampled";
        case SearchStrategy::both: return "both";
    }
    return "auto";
}

inline SearchStrategy strategy_from(const std::string& s) {
    if (s == "auto") return SearchStrategy::automatic;
    if (s == "exhaustive") return SearchStrategy::exhaustive;
    if (s == "sampled") return SearchStrategy::sampled;
    if (s == "both") return SearchStrategy::both;
    throw ConfigError("unknown search strategy '" + s + "'");
}

}  // namespace detail

inline json to_json(const ScenarioConfig& s) {
    return json{{"name", s.name},
                {"domain", {{"lo", detail::vec_to_json(s.domain.lo)}, {"hi", detail::vec_to_json(s.domain.hi)}}},
                {"agent_altitude", s.agent_altitude},
                {"source", detail::vec_to_json(s.source.position)},
                {"rate", s.source.rate},
                {"environment",
                 {{"wind_speed", s.env.wind_speed},
                  {"wind_direction", s.env.wind_direction},
                  {"diffusivity", s.env.diffusivity},
                  {"lifetime", s.env.lifetime}}},
                {"sensor", {{"noise_fraction", s.sensor.noise_fraction}, {"noise_floor", s.sensor.noise_floor}}},
                {"start", detail::vec_to_json(s.start)},
                {"max_steps", s.max_steps},
                {"step_period", s.step_period},
                {"success_radius", s.success_radius},
                {"success_trace", s.success_trace}};
}

inline ScenarioConfig scenario_from_json(const json& j, const ScenarioConfig& base = {}) {
    ScenarioConfig s = base;
    detail::read(j, "name", s.name);
    if (j.contains("domain")) {
        s.domain.lo = detail::vec2_from_json(j["domain"].at("lo"), "domain.lo");
        s.domain.hi = detail::vec2_from_json(j["domain"].at("hi"), "domain.hi");
    }
    detail::read(j, "agent_altitude", s.agent_altitude);
    if (j.contains("source")) s.source.position = detail::vec3_from_json(j["source"], "source");
    detail::read(j, "rate", s.source.rate);
    if (j.contains("environment")) {
        const json& e = j["environment"];
        detail::read(e, "wind_speed", s.env.wind_speed);
        detail::read(e, "wind_direction", s.env.wind_direction);
        detail::read(e, "diffusivity", s.env.diffusivity);
        detail::read(e, "lifetime", s.env.lifetime);
    }
    if (j.contains("sensor")) {
        detail::read(j["sensor"], "noise_fraction", s.sensor.noise_fraction);
        detail::read(j["sensor"], "noise_floor", s.sensor.noise_floor);
    }
    if (j.contains("start")) s.start = detail::vec2_from_json(j["start"], "start");
    detail::read(j, "max_steps", s.max_steps);
    detail::read(j, "step_period", s.step_period);
    detail::read(j, "success_radius", s.success_radius);
    detail::read(j, "success_trace", s.success_trace);
    return s;
}

inline json to_json(const PlannerSpec& p) {
    return json{{"name", p.name},
                {"kind", p.kind},
                {"horizon", p.horizon},
                {"search",
                 {{"strategy", detail::strategy_name(p.search.strategy)},
                  {"random_candidates", p.search.random_candidates},
                  {"exhaustive_max_horizon", p.search.exhaustive_max_horizon}}},
                {"scenarios", p.scenarios},
                {"rollout_particles", p.rollout_particles},
                {"entropy_cell", p.entropy_cell},
                {"enforce_terminal", p.enforce_terminal},
                {"lawnmower_spacing", p.lawnmower_spacing}};
}

inline PlannerSpec planner_from_json(const json& j) {
    PlannerSpec p;
    detail::read(j, "kind", p.kind);
    p.name = p.kind;
    detail::read(j, "name", p.name);
    detail::read(j, "horizon", p.horizon);
    if (j.contains("search")) {
        const json& s = j["search"];
        if (s.contains("strategy")) p.search.strategy = detail::strategy_from(s["strategy"].get<std::string>());
        detail::read(s, "random_candidates", p.search.random_candidates);
        detail::read(s, "exhaustive_max_horizon", p.search.exhaustive_max_horizon);
    }
    detail::read(j, "scenarios", p.scenarios);
    detail::read(j, "rollout_particles", p.rollout_particles);
    detail::read(j, "entropy_cell", p.entropy_cell);
    detail::read(j, "enforce_terminal", p.enforce_terminal);
    detail::read(j, "lawnmower_spacing", p.lawnmower_spacing);
    if (!p.scripted()) planner_kind_from_string(p.kind);
    if (p.horizon < 1) throw ConfigError("planner '" + p.name + "': horizon must be >= 1");
    if (p.scenarios < 1) throw ConfigError("planner '" + p.name + "': need at least one measurement scenario");
    return p;
}

inline json to_json(const RootConfig& c) {
    json scenarios = json::array();
    for (const auto& s : c.scenarios) scenarios.push_back(to_json(s));
    json planners = json::array();
    for (const auto& p : c.planners) planners.push_back(to_json(p));
    json weights{{"Q", detail::mat_to_json(c.weights.Q)}, {"R", detail::mat_to_json(c.weights.R)}};
    weights["S"] = c.weights.s_from_lyapunov ? json("lyapunov") : detail::mat_to_json(c.weights.S);
    json terminal{{"enabled", c.terminal.enabled},
                  {"K", c.terminal.derive_gain ? json("derive-from-S") : detail::mat_to_json(c.terminal.K)},
                  {"g", c.terminal.delta_bound},
                  {"input_half_width", c.terminal.input_half_width},
                  {"mean_margin", c.terminal.mean_margin}};
    const EstimatorConfig& e = c.estimator;
    json estimator{{"particles", e.particles},
                   {"estimate_rate", e.estimate_rate},
                   {"rate_range", {e.rate_lo, e.rate_hi}},
                   {"resample_threshold", e.resample_threshold},
                   {"jitter_scale", e.jitter_scale}};
    json verify{{"episodes", c.verify.episodes},   {"horizon", c.verify.horizon},
                {"max_steps", c.verify.max_steps}, {"w_inflation", c.verify.w_inflation},
                {"particles", c.verify.particles}, {"scenario", c.verify.scenario}};
    return json{{"schema_version", c.schema_version},
                {"seed", c.seed},
                {"runs", c.runs},
                {"jobs", c.jobs},
                {"out_dir", c.out_dir},
                {"verbose", c.verbose},
                {"scenarios", scenarios},
                {"planners", planners},
                {"weights", weights},
                {"terminal", terminal},
                {"estimator", estimator},
                {"actions", {{"step", c.step}, {"diagonal", c.diagonal == DiagonalMode::normalized ? "normalized" : "per_axis"}}},
                {"delta_max", c.delta_max},
                {"verify", verify}};
}

inline RootConfig root_from_json(const json& j) {
    RootConfig c;
    detail::read(j, "schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion) {
        throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
    }
    detail::read(j, "seed", c.seed);
    detail::read(j, "runs", c.runs);
    detail::read(j, "jobs", c.jobs);
    detail::read(j, "out_dir", c.out_dir);
    detail::read(j, "verbose", c.verbose);

    ScenarioConfig base;
    if (j.contains("scenario_defaults")) base = scenario_from_json(j["scenario_defaults"]);
    if (j.contains("scenarios")) {
        for (const auto& s : j["scenarios"]) c.scenarios.push_back(scenario_from_json(s, base));
    }
    if (j.contains("planners")) {
        for (const auto& p : j["planners"]) c.planners.push_back(planner_from_json(p));
    }
    if (j.contains("weights")) {
        const json& w = j["weights"];
        if (w.contains("Q")) c.weights.Q = detail::mat_from_json(w["Q"], "weights.Q");
        if (w.contains("R")) c.weights.R = detail::mat_from_json(w["R"], "weights.R");
        if (w.contains("S")) {
            if (w["S"].is_string()) {
                if (w["S"].get<std::string>() != "lyapunov") throw ConfigError("weights.S: expected a matrix or \"lyapunov\"");
                c.weights.s_from_lyapunov = true;
            } else {
                c.weights.S = detail::mat_from_json(w["S"], "weights.S");
            }
        }
    }
    if (j.contains("terminal")) {
        const json& t = j["terminal"];
        detail::read(t, "enabled", c.terminal.enabled);
        if (t.contains("K")) {
            if (t["K"].is_string()) {
                if (t["K"].get<std::string>() != "derive-from-S") throw ConfigError("terminal.K: expected a matrix or \"derive-from-S\"");
                c.terminal.derive_gain = true;
            } else {
                c.terminal.derive_gain = false;
                c.terminal.K = detail::mat_from_json(t["K"], "terminal.K");
            }
        }
        detail::read(t, "g", c.terminal.delta_bound);
        detail::read(t, "input_half_width", c.terminal.input_half_width);
        detail::read(t, "mean_margin", c.terminal.mean_margin);
    }
    if (j.contains("estimator")) {
        const json& e = j["estimator"];
        detail::read(e, "particles", c.estimator.particles);
        detail::read(e, "estimate_rate", c.estimator.estimate_rate);
        if (e.contains("rate_range")) {
            c.estimator.rate_lo = e["rate_range"].at(0).get<double>();
            c.estimator.rate_hi = e["rate_range"].at(1).get<double>();
        }
        detail::read(e, "resample_threshold", c.estimator.resample_threshold);
        detail::read(e, "jitter_scale", c.estimator.jitter_scale);
    }
    if (j.contains("actions")) {
        detail::read(j["actions"], "step", c.step);
        if (j["actions"].contains("diagonal")) {
            const auto d = j["actions"]["diagonal"].get<std::string>();
            if (d == "normalized") c.diagonal = DiagonalMode::normalized;
            else if (d == "per_axis") c.diagonal = DiagonalMode::per_axis;
            else throw ConfigError("actions.diagonal: expected \"normalized\" or \"per_axis\"");
        }
    }
    detail::read(j, "delta_max", c.delta_max);
    if (j.contains("verify")) {
        const json& v = j["verify"];
        detail::read(v, "episodes", c.verify.episodes);
        detail::read(v, "horizon", c.verify.horizon);
        detail::read(v, "max_steps", c.verify.max_steps);
        detail::read(v, "w_inflation", c.verify.w_inflation);
        detail::read(v, "particles", c.verify.particles);
        detail::read(v, "scenario", c.verify.scenario);
    }

    if (c.scenarios.empty()) throw ConfigError("config: at least one scenario is required");
    if (c.planners.empty()) throw ConfigError("config: at least one planner is required");
    for (const auto& s : c.scenarios) s.validate();
    c.estimator.validate();
    if (c.runs < 1) throw ConfigError("config: runs must be >= 1");
    if (c.jobs < 1) throw ConfigError("config: jobs must be >= 1");
    // Q and R are checked here so no run starts with invalid weights.
    const Eigen::SelfAdjointEigenSolver<Mat2> q(c.weights.Q), r(c.weights.R);
    if (!(q.eigenvalues().minCoeff() > 0.0) || !(r.eigenvalues().minCoeff() > 0.0)) {
        throw ConfigError("weights: Q and R must be positive definite");
    }
    if (c.verify.scenario >= c.scenarios.size()) throw ConfigError("verify.scenario: index out of range");
    return c;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise. Array elements are
/// addressed by index ("planners.0.horizon=5").
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::string& key = parts[i];
        const bool last = i + 1 == parts.size();
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(key);
            } catch (const std::exception&) {
                throw ConfigError("override '" + assignment + "': '" + key + "' is not an array index");
            }
            if (idx >= node->size()) throw ConfigError("override '" + assignment + "': index out of range");
            node = &(*node)[idx];
        } else {
            node = &(*node)[key];
        }
        if (last) *node = value;
    }
}

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
    return j;
}

inline RootConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    json j = load_json_file(path);
    for (const auto& o : overrides) apply_override(j, o);
    return root_from_json(j);
}

inline bool operator==(const RootConfig& a, const RootConfig& b) { return to_json(a) == to_json(b); }

inline Box2 mean_box_for(const Box2& domain, double margin) {
    const Box2 shrunk = domain.shrunk(margin);
    return shrunk.empty() ? domain : shrunk;
}

/// Builds the shared run settings; validates the terminal ingredients against
/// the first scenario's domain. Throws InstabilityError/NoFeasibleRadiusError.
inline RunSettings build_run_settings(const RootConfig& c) {
    RunSettings s;
    s.estimator = c.estimator;
    s.actions = ActionSet(c.step, c.diagonal);
    s.delta_max = c.delta_max;
    s.mean_margin = c.terminal.mean_margin;
    s.weights.Q = c.weights.Q;
    s.weights.R = c.weights.R;
    s.weights.S = c.weights.S;

    if (c.terminal.enabled || c.weights.s_from_lyapunov) {
        Mat2 K = c.terminal.K;
        if (c.terminal.derive_gain) {
            if (c.weights.s_from_lyapunov) K = solve_riccati(c.weights.Q, c.weights.R).K;
            else K = gain_from_terminal_weight(c.weights.S, c.weights.R);
        }
        const Mat2 S = solve_terminal_weight(K, c.weights.Q, c.weights.R);
        s.weights.S = S;
        if (c.terminal.enabled) {
            const Box2& domain = c.scenarios.front().domain;
            const double half = c.terminal.input_half_width > 0.0 ? c.terminal.input_half_width : c.step;
            s.terminal = validate_terminal_ingredients(K, c.weights.Q, c.weights.R, S, domain, half,
                                                       mean_box_for(domain, c.terminal.mean_margin),
                                                       c.terminal.delta_bound);
            if (!c.weights.s_from_lyapunov) {
                const double rel = (S - c.weights.S).cwiseAbs().maxCoeff() / c.weights.S.cwiseAbs().maxCoeff();
                s.terminal->checks.push_back({"configured_S_within_0.5pct", rel <= 5e-3, rel});
            }
        }
    }
    s.weights.validate();
    return s;
}

}  // namespace msdcee
