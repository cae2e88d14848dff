#pragma once

// Closed-loop episodes, Monte Carlo campaigns, metrics and the numerical
// checks of the feasibility and descent guarantees.

#include "msdcee/estimator.hpp"
#include "msdcee/planner.hpp"
#include "msdcee/plume.hpp"
#include "msdcee/terminal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace msdcee {

struct ScenarioConfig {
    std::string name = "scenario";
    Box2 domain{Vec2(0, 0), Vec2(50, 50)};
    double agent_altitude = 1.0;
    SourceTerm source{Vec3(25.0, 10.0, 0.0), 5.0};
    EnvironmentParams env;
    SensorModel sensor;
    Vec2 start{5.0, 5.0};
    int max_steps = 600;
    double step_period = 1.0;  // s per decision
    double success_radius = 2.0;
    double success_trace = 4.0;  // m^2, bound on the position-covariance trace
    std::uint64_t seed = 1;

    void validate() const {
        if (domain.empty()) throw ConfigError("scenario '" + name + "': empty domain");
        if (!domain.contains(start)) throw ConfigError("scenario '" + name + "': start outside the domain");
        if (!domain.contains(source.position.head<2>())) {
            throw ConfigError("scenario '" + name + "': source outside the domain");
        }
        if (!(source.rate > 0.0)) throw ConfigError("scenario '" + name + "': emission rate must be > 0");
        if (max_steps < 0) throw ConfigError("scenario '" + name + "': max_steps must be >= 0");
        env.validate();
        sensor.validate();
    }
};

/// How a run chooses its moves. Besides the four planners there are two
/// scripted policies: "oracle_greedy" heads straight for the true source and
/// "lawnmower" sweeps the domain in parallel lanes.
struct PlannerSpec {
    std::string name = "ms-dcee";
    std::string kind = "ms_dcee";
    int horizon = 10;
    SearchConfig search;
    std::size_t scenarios = 8;
    std::size_t rollout_particles = 500;
    double entropy_cell = 1.0;
    bool enforce_terminal = true;
    double lawnmower_spacing = 4.0;

    bool scripted() const { return kind == "oracle_greedy" || kind == "lawnmower"; }
};

/// Settings shared by every run of a campaign.
struct RunSettings {
    EstimatorConfig estimator;
    Weights weights;  // horizon is taken from the PlannerSpec
    ActionSet actions{};
    std::optional<TerminalIngredients> terminal;
    double delta_max = 4.0;     // m, per-step clamp on the reported mean
    double mean_margin = 2.5;   // reported means live in the domain shrunk by this
    bool oracle_mean = false;   // pin the mean to the true source (verification)
    bool price_shifted = false; // price the shifted previous plan each step
    bool keep_particles = false;
};

struct StepRecord {
    int t = 0;
    Vec2 position = Vec2::Zero();
    double reading = 0.0;
    Vec2 mean = Vec2::Zero();      // reported (projected, step-clamped)
    Vec2 raw_mean = Vec2::Zero();
    Mat2 covariance = Mat2::Zero();
    double trace_p = 0.0;
    double ess = 0.0;
    bool rescued = false;          // estimator divergence recovered by uniform reweighting
    // Plan chosen at this step (absent on the final step).
    bool planned = false;
    double cost = 0.0;
    double tracking = 0.0;
    double uncertainty = 0.0;
    bool feasible = true;
    bool terminal_enforced = false;
    std::size_t evaluated = 0;
    int action_index = -1;
    Vec2 action = Vec2::Zero();
    std::vector<Vec2> plan_moves;
    std::vector<Vec2> plan_states;
    std::vector<Vec2> terminal_means;
    // Cost at this step of the previous plan shifted by one with the
    // terminal-controller input appended.
    std::optional<double> shifted_cost;
};

struct RunRecord {
    std::string scenario;
    std::string planner;
    int run_index = 0;
    std::uint64_t seed = 0;
    Vec2 source = Vec2::Zero();
    int horizon = 0;
    int max_steps = 0;
    double step_period = 1.0;
    std::vector<StepRecord> steps;
    bool success = false;
    std::optional<double> arrival_time;
    double final_error = 0.0;
    std::vector<std::string> events;

    std::string id() const { return planner + ":" + scenario + ":" + std::to_string(run_index); }
};

namespace detail {

inline int closest_move(const ActionSet& actions, const Vec2& from, const Vec2& target, const Box2& box) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < actions.size(); ++a) {
        const Vec2 next = from + actions[a];
        if (!box.contains(next)) continue;
        const double d = (next - target).norm();
        if (d < best_d - 1e-12) {
            best_d = d;
            best = static_cast<int>(a);
        }
    }
    return best;
}

inline std::vector<Vec2> lawnmower_waypoints(const Box2& box, double spacing, double edge) {
    std::vector<Vec2> wp;
    bool left_to_right = true;
    for (double y = box.lo.y() + edge; y <= box.hi.y() - edge + 1e-9; y += spacing) {
        const double xa = box.lo.x() + edge, xb = box.hi.x() - edge;
        wp.emplace_back(left_to_right ? xa : xb, y);
        wp.emplace_back(left_to_right ? xb : xa, y);
        left_to_right = !left_to_right;
    }
    return wp;
}

inline Vec2 clamp_step(const Vec2& previous, const Vec2& raw, double delta_max) {
    if (!(delta_max > 0.0)) return raw;
    return raw.cwiseMax(previous - Vec2::Constant(delta_max)).cwiseMin(previous + Vec2::Constant(delta_max));
}

}  // namespace detail

/// Terminal-controller input for a predicted terminal error and mean shift.
inline Vec2 terminal_input(const Mat2& K, const Vec2& terminal_error, const Vec2& mean_shift) {
    return K * terminal_error + mean_shift;
}

/// One closed-loop episode: measure, update, plan, apply the first move.
inline RunRecord run_episode(const ScenarioConfig& cfg, const PlannerSpec& spec, const RunSettings& settings) {
    cfg.validate();
    settings.estimator.validate();

    RunRecord rec;
    rec.scenario = cfg.name;
    rec.planner = spec.name;
    rec.seed = cfg.seed;
    rec.source = cfg.source.position.head<2>();
    rec.horizon = spec.horizon;
    rec.max_steps = cfg.max_steps;
    rec.step_period = cfg.step_period;

    RandomStream prior_stream(derive_seed(cfg.seed, StreamTag::prior));
    RandomStream sensor_stream(derive_seed(cfg.seed, StreamTag::sensor));
    RandomStream resample_stream(derive_seed(cfg.seed, StreamTag::resample));

    EstimatorConfig est = settings.estimator;
    est.source_altitude = cfg.source.position.z();
    if (!est.estimate_rate) est.known_rate = cfg.source.rate;
    const JitterBounds bounds{cfg.domain, est.rate_lo, est.rate_hi};
    ParticleSet ps = init_prior(cfg.domain, est.particles, prior_stream, est);

    const Box2 shrunk = cfg.domain.shrunk(settings.mean_margin);
    const Box2 mean_box = shrunk.empty() ? cfg.domain : shrunk;
    const Vec2 true_xy = cfg.source.position.head<2>();

    PlannerSetup setup;
    if (!spec.scripted()) {
        setup.kind = planner_kind_from_string(spec.kind);
        setup.weights = settings.weights;
        setup.weights.horizon = spec.horizon;
        setup.actions = settings.actions;
        setup.search = spec.search;
        setup.rollout.scenarios = spec.scenarios;
        setup.rollout.max_particles = spec.rollout_particles;
        setup.rollout.entropy_cell = spec.entropy_cell;
        setup.rollout.delta_max = settings.delta_max;
        setup.rollout.mean_box = mean_box;
        setup.terminal = settings.terminal;
        setup.enforce_terminal = spec.enforce_terminal;
    }
    const std::vector<Vec2> waypoints =
        spec.kind == "lawnmower" ? detail::lawnmower_waypoints(cfg.domain, spec.lawnmower_spacing,
                                                               std::min(2.0, spec.lawnmower_spacing / 2))
                                 : std::vector<Vec2>{};
    std::size_t next_waypoint = 0;

    Vec2 x = cfg.start;
    std::optional<Vec2> previous_mean;
    for (int t = 0;; ++t) {
        StepRecord step;
        step.t = t;
        step.position = x;
        const Vec3 agent(x.x(), x.y(), cfg.agent_altitude);
        step.reading = measure(agent, cfg.source, cfg.env, cfg.sensor, sensor_stream);
        try {
            ps = bayes_update(ps, step.reading, agent, cfg.env, cfg.sensor, resample_stream, est, bounds);
        } catch (const EstimatorDivergence& e) {
            std::fill(ps.weights.begin(), ps.weights.end(), 1.0 / static_cast<double>(ps.size()));
            ++ps.generation;
            step.rescued = true;
            rec.events.push_back("t=" + std::to_string(t) + " estimator divergence, uniform reweighting: " + e.what());
        }

        PosteriorSummary summary = summarize(ps);
        step.raw_mean = summary.position_mean();
        Vec2 reported = mean_box.clamp(step.raw_mean);
        if (previous_mean) reported = detail::clamp_step(*previous_mean, reported, settings.delta_max);
        if (settings.oracle_mean) reported = true_xy;
        summary.mean.head<2>() = reported;
        previous_mean = reported;
        step.mean = reported;
        step.covariance = summary.position_covariance();
        step.trace_p = summary.trace_position;
        step.ess = effective_sample_size(ps);

        const bool arrived = (x - true_xy).norm() <= cfg.success_radius && step.trace_p <= cfg.success_trace;
        if (arrived || t >= cfg.max_steps) {
            rec.steps.push_back(std::move(step));
            if (arrived) {
                rec.success = true;
                rec.arrival_time = t * cfg.step_period;
            }
            break;
        }

        int index = -1;
        Vec2 move = Vec2::Zero();
        if (spec.kind == "oracle_greedy") {
            index = detail::closest_move(settings.actions, x, true_xy, cfg.domain);
        } else if (spec.kind == "lawnmower") {
            while (next_waypoint < waypoints.size() &&
                   (x - waypoints[next_waypoint]).norm() <= settings.actions.step() * 0.75) {
                ++next_waypoint;
            }
            const Vec2 target = next_waypoint < waypoints.size() ? waypoints[next_waypoint] : waypoints.back();
            index = detail::closest_move(settings.actions, x, target, cfg.domain);
        } else {
            PlanningProblem problem;
            problem.x_t = x;
            problem.altitude = cfg.agent_altitude;
            problem.particles = &ps;
            problem.anchor = summary;
            problem.env = cfg.env;
            problem.sensor = cfg.sensor;
            problem.state_box = cfg.domain;
            if (settings.oracle_mean) problem.oracle_mean = true_xy;

            setup.reference_sequences.clear();
            const StepRecord* prev = rec.steps.empty() ? nullptr : &rec.steps.back();
            const bool can_shift = settings.price_shifted && settings.terminal && prev != nullptr && prev->planned &&
                                   prev->feasible && prev->terminal_enforced && !prev->terminal_means.empty();
            if (can_shift) {
                // Shifted plan: tail of the previous plan, then the terminal
                // controller evaluated at the first scenario's terminal mean.
                const Vec2 shift = reported - prev->mean;
                ActionSequence shifted;
                shifted.moves.assign(prev->plan_moves.begin() + 1, prev->plan_moves.end());
                const Vec2 e = prev->plan_states.back() - prev->terminal_means.front();
                shifted.moves.push_back(terminal_input(settings.terminal->K, e, shift));
                setup.reference_sequences.push_back(std::move(shifted));
            }

            RandomStream plan_stream(derive_seed(cfg.seed, StreamTag::plan, static_cast<std::uint64_t>(t)));
            PlanResult plan = optimize(problem, setup, plan_stream);
            step.planned = true;
            step.cost = plan.cost;
            step.tracking = plan.tracking;
            step.uncertainty = plan.uncertainty;
            step.feasible = plan.feasible;
            step.terminal_enforced = plan.terminal_enforced;
            step.evaluated = plan.evaluated;
            step.plan_moves = plan.sequence.moves;
            step.plan_states = plan.states;
            step.terminal_means = plan.terminal_means;
            if (can_shift && !plan.reference_costs.empty() && !plan.reference_costs.front().diverged) {
                step.shifted_cost = plan.reference_costs.front().total;
            }
            if (!plan.feasible && plan.terminal_enforced) {
                rec.events.push_back("t=" + std::to_string(t) + " no candidate meets the terminal constraint; dropped");
            }
            if (!plan.sequence.indices.empty()) index = plan.sequence.indices.front();
        }

        if (index < 0) {
            rec.events.push_back("t=" + std::to_string(t) + " no admissible move");
            rec.steps.push_back(std::move(step));
            break;
        }
        move = settings.actions[static_cast<std::size_t>(index)];
        step.action_index = index;
        step.action = move;
        rec.steps.push_back(std::move(step));
        x += move;
    }

    rec.final_error = (rec.steps.back().mean - true_xy).norm();
    return rec;
}

struct CellSummary {
    std::string planner;
    std::string scenario;
    std::size_t runs = 0;
    double success_rate = 0.0;
    std::optional<double> mean_arrival_time;  // over successful runs
    double mean_final_error = 0.0;
    double final_rmse = 0.0;
    std::vector<double> rmse_curve;
};

/// Root-mean-square estimate error per step over runs. Runs that ended early
/// hold their last estimate. Curve length is max_steps + 1.
inline std::vector<double> rmse_curve(const std::vector<const RunRecord*>& records) {
    int length = 0;
    for (const auto* r : records) length = std::max(length, r->max_steps + 1);
    std::vector<double> curve(static_cast<std::size_t>(length), 0.0);
    if (records.empty()) return curve;
    for (int t = 0; t < length; ++t) {
        double acc = 0.0;
        for (const auto* r : records) {
            const auto& st = r->steps[std::min<std::size_t>(static_cast<std::size_t>(t), r->steps.size() - 1)];
            acc += (st.mean - r->source).squaredNorm();
        }
        curve[static_cast<std::size_t>(t)] = std::sqrt(acc / static_cast<double>(records.size()));
    }
    return curve;
}

inline std::vector<double> rmse_curve(const std::vector<RunRecord>& records) {
    std::vector<const RunRecord*> ptrs;
    for (const auto& r : records) ptrs.push_back(&r);
    return rmse_curve(ptrs);
}

/// First time the estimate error drops below `threshold`, if ever.
inline std::optional<double> time_to_error(const RunRecord& r, double threshold) {
    for (const auto& st : r.steps) {
        if ((st.mean - r.source).norm() < threshold) return st.t * r.step_period;
    }
    return std::nullopt;
}

inline CellSummary summarize_cell(const std::vector<const RunRecord*>& records) {
    CellSummary c;
    if (records.empty()) return c;
    c.planner = records.front()->planner;
    c.scenario = records.front()->scenario;
    c.runs = records.size();
    std::size_t successes = 0;
    double arrival = 0.0, err = 0.0;
    for (const auto* r : records) {
        if (r->success) {
            ++successes;
            arrival += *r->arrival_time;
        }
        err += r->final_error;
    }
    c.success_rate = static_cast<double>(successes) / static_cast<double>(records.size());
    if (successes > 0) c.mean_arrival_time = arrival / static_cast<double>(successes);
    c.mean_final_error = err / static_cast<double>(records.size());
    c.rmse_curve = rmse_curve(records);
    c.final_rmse = c.rmse_curve.empty() ? 0.0 : c.rmse_curve.back();
    return c;
}

/// q-quantile of the per-step shift |p_{t+1} - p_t| of the reported mean over
/// all runs (nearest rank). Calibration data for the mean-shift bound g.
inline std::optional<double> mean_shift_quantile(const std::vector<RunRecord>& records, double q) {
    std::vector<double> shifts;
    for (const auto& r : records)
        for (std::size_t i = 1; i < r.steps.size(); ++i) shifts.push_back((r.steps[i].mean - r.steps[i - 1].mean).norm());
    if (shifts.empty()) return std::nullopt;
    const auto rank = static_cast<std::size_t>(std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(shifts.size())));
    const auto k = shifts.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(rank, 1) - 1);
    std::nth_element(shifts.begin(), k, shifts.end());
    return *k;
}

struct CampaignResult {
    std::vector<RunRecord> records;  // ordered by planner, scenario, run index
    std::vector<CellSummary> cells;
};

/// Runs every (planner, scenario) cell `runs` times with seeds base_seed + run
/// index. Episodes run on `jobs` threads; results are merged by index so the
/// output does not depend on the thread count.
inline CampaignResult run_campaign(const std::vector<ScenarioConfig>& scenarios, const std::vector<PlannerSpec>& planners,
                                   const RunSettings& settings, int runs, std::uint64_t base_seed, int jobs = 1) {
    if (runs < 1) throw ConfigError("campaign: runs must be >= 1");
    struct Job {
        std::size_t planner, scenario;
        int run;
    };
    std::vector<Job> work;
    for (std::size_t p = 0; p < planners.size(); ++p)
        for (std::size_t s = 0; s < scenarios.size(); ++s)
            for (int r = 0; r < runs; ++r) work.push_back({p, s, r});

    CampaignResult out;
    out.records.resize(work.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) {
            try {
                ScenarioConfig sc = scenarios[work[i].scenario];
                sc.seed = base_seed + static_cast<std::uint64_t>(work[i].run);
                RunRecord rec = run_episode(sc, planners[work[i].planner], settings);
                rec.run_index = work[i].run;
                out.records[i] = std::move(rec);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (std::size_t p = 0; p < planners.size(); ++p) {
        for (std::size_t s = 0; s < scenarios.size(); ++s) {
            std::vector<const RunRecord*> cell;
            for (std::size_t i = 0; i < work.size(); ++i)
                if (work[i].planner == p && work[i].scenario == s) cell.push_back(&out.records[i]);
            out.cells.push_back(summarize_cell(cell));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Guarantee checks

struct CheckViolation {
    int t = 0;
    std::string kind;
    double lhs = 0.0;
    double rhs = 0.0;
};

struct DescentReport {
    std::size_t checked = 0;          // steps where the one-step bound applies
    std::size_t contraction_checked = 0;
    std::size_t omega_checked = 0;
    bool w_valid = true;              // P_t <= W at every step
    double omega_level = 0.0;
    std::optional<int> entered_omega;
    std::vector<CheckViolation> violations;

    bool passed() const { return w_valid && violations.empty(); }
};

/// Smallest scalar multiple of the identity dominating every recorded P_t.
inline Mat2 empirical_w(const RunRecord& record, double inflation = 1.0) {
    double top = 0.0;
    for (const auto& st : record.steps) {
        const Eigen::SelfAdjointEigenSolver<Mat2> es(st.covariance);
        top = std::max(top, es.eigenvalues().maxCoeff());
    }
    return inflation * top * Mat2::Identity();
}

/// Checks the descent recursion of the optimal cost along an oracle-mode run.
///
/// With Jt the applied cost at t and J'(t+1) the best of the discrete optimum
/// at t+1 (when feasible) and the shifted previous plan, and E_t = |x_t - p|^2
/// + tr P_t, the checks are
///   one-step:     J'(t+1) <= Jt - lmin(Q) E_t + tr(S W)
///   contraction:  J'(t+1) <= Jt (1 - lmin(Q)/lmax(S)) + (lmin(Q)/lmax(S) N + 1) tr(S W)
///                 (only where the unconstrained terminal-controller sequence
///                 from x_t is admissible, the premise of the upper bound)
///   level set:    Jt <= c  implies  J'(t+1) <= c,  c = (N + lmax(S)/lmin(Q)) tr(S W)
inline DescentReport check_descent(const RunRecord& record, const Mat2& W, const Weights& weights, const Mat2& K,
                                   double input_half_width, const Box2& state_box) {
    DescentReport rep;
    const double lmin_q = Eigen::SelfAdjointEigenSolver<Mat2>(weights.Q).eigenvalues().minCoeff();
    const double lmax_s = Eigen::SelfAdjointEigenSolver<Mat2>(weights.S).eigenvalues().maxCoeff();
    const double tr_sw = (weights.S * W).trace();
    const double n = static_cast<double>(record.horizon);
    rep.omega_level = (n + lmax_s / lmin_q) * tr_sw;

    for (const auto& st : record.steps) {
        const Eigen::SelfAdjointEigenSolver<Mat2> es(W - st.covariance);
        if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, W.trace())) {
            rep.w_valid = false;
            rep.violations.push_back({st.t, "P_t exceeds W", st.covariance.trace(), W.trace()});
        }
    }

    const Mat2 A = Mat2::Identity() + K;
    for (std::size_t i = 0; i + 1 < record.steps.size(); ++i) {
        const StepRecord& now = record.steps[i];
        const StepRecord& next = record.steps[i + 1];
        if (!now.planned || !now.feasible || !now.terminal_enforced) continue;

        std::optional<double> j_next;
        if (next.shifted_cost) j_next = *next.shifted_cost;
        if (next.planned && next.feasible && next.terminal_enforced) {
            j_next = j_next ? std::min(*j_next, next.cost) : next.cost;
        }
        if (!j_next) continue;

        if (!rep.entered_omega && now.cost <= rep.omega_level) rep.entered_omega = now.t;

        const double err = (now.position - record.source).squaredNorm() + now.covariance.trace();
        const double one_step = now.cost - lmin_q * err + tr_sw;
        ++rep.checked;
        if (*j_next > one_step + 1e-9 * std::max(1.0, std::abs(one_step))) {
            rep.violations.push_back({next.t, "one-step descent", *j_next, one_step});
        }

        bool premise = true;
        Vec2 e = now.position - record.source;
        Vec2 xk = now.position;
        for (int k = 0; k < record.horizon && premise; ++k) {
            const Vec2 u = K * e;
            premise = u.cwiseAbs().maxCoeff() <= input_half_width + 1e-12 && state_box.contains(xk + u);
            xk += u;
            e = A * e;
        }
        if (premise) {
            ++rep.contraction_checked;
            const double ratio = lmin_q / lmax_s;
            const double contraction = now.cost * (1.0 - ratio) + (ratio * n + 1.0) * tr_sw;
            if (*j_next > contraction + 1e-9 * std::max(1.0, std::abs(contraction))) {
                rep.violations.push_back({next.t, "contraction", *j_next, contraction});
            }
        }

        if (now.cost <= rep.omega_level) {
            ++rep.omega_checked;
            if (*j_next > rep.omega_level * (1.0 + 1e-12)) {
                rep.violations.push_back({next.t, "left level set", *j_next, rep.omega_level});
            }
        }
    }
    return rep;
}

struct FeasibilityReport {
    bool applicable = true;  // false when the run never enforced the terminal constraint
    std::size_t checked = 0;
    std::vector<CheckViolation> violations;

    bool passed() const { return violations.empty(); }
};

/// For every step whose predecessor solved the constrained problem, builds the
/// shifted plan (previous tail plus the terminal-controller input) in the
/// continuous input box and checks state, input and terminal constraints.
inline FeasibilityReport check_recursive_feasibility(const RunRecord& record, const TerminalIngredients& terminal,
                                                     const Box2& state_box, double input_half_width) {
    FeasibilityReport rep;
    bool any_enforced = false;
    for (const auto& st : record.steps) any_enforced = any_enforced || (st.planned && st.terminal_enforced);
    if (!any_enforced) {
        rep.applicable = false;
        return rep;
    }

    const Mat2 A = Mat2::Identity() + terminal.K;
    const double k_row = std::max(terminal.K.row(0).norm(), terminal.K.row(1).norm());
    const double worst_input = k_row * terminal.radius + terminal.delta_bound;

    for (std::size_t i = 0; i + 1 < record.steps.size(); ++i) {
        const StepRecord& prev = record.steps[i];
        const StepRecord& now = record.steps[i + 1];
        if (!prev.planned || !prev.feasible || !prev.terminal_enforced) continue;
        ++rep.checked;

        if (worst_input > input_half_width + 1e-12) {
            rep.violations.push_back({now.t, "input set does not contain K T + G", worst_input, input_half_width});
        }
        for (std::size_t k = 1; k < prev.plan_moves.size(); ++k) {
            if (prev.plan_moves[k].cwiseAbs().maxCoeff() > input_half_width + 1e-12) {
                rep.violations.push_back({now.t, "tail input outside U", prev.plan_moves[k].cwiseAbs().maxCoeff(),
                                          input_half_width});
            }
            if (!state_box.contains(prev.plan_states[k + 1])) {
                rep.violations.push_back({now.t, "tail state outside X", 0.0, 0.0});
            }
        }
        const Vec2 shift = now.mean - prev.mean;
        if (shift.norm() > terminal.delta_bound + 1e-12) {
            rep.violations.push_back({now.t, "mean shift exceeds g", shift.norm(), terminal.delta_bound});
        }
        const Vec2 x_end = prev.plan_states.back();
        for (const Vec2& mean_end : prev.terminal_means) {
            const Vec2 e = x_end - mean_end;
            const Vec2 u = terminal_input(terminal.K, e, shift);
            if (u.cwiseAbs().maxCoeff() > input_half_width + 1e-12) {
                rep.violations.push_back({now.t, "terminal input outside U", u.cwiseAbs().maxCoeff(), input_half_width});
            }
            if (!state_box.contains(x_end + u)) rep.violations.push_back({now.t, "appended state outside X", 0.0, 0.0});
            const double next_err = (A * e).norm();
            if (next_err > terminal.radius + 1e-9) {
                rep.violations.push_back({now.t, "terminal set not invariant", next_err, terminal.radius});
            }
        }
    }
    return rep;
}

}  // namespace msdcee
