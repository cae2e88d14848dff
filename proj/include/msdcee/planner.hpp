#pragma once

// Receding-horizon action selection over the discrete move set.
//
// Four planners share the candidate machinery:
//   smpc     tracks the current posterior mean; the posterior is frozen
//   ms_dcee  dual cost over predicted posteriors, with terminal cost/constraint
//   dcee     single-step dual cost without terminal ingredients
//   ipp      maximizes expected reduction of posterior entropy
//
// Predicted posteriors are rolled out per measurement scenario: each scenario
// draws one hypothesis from the posterior and synthesizes the readings that
// hypothesis would produce along the candidate path.

#include "msdcee/common.hpp"
#include "msdcee/estimator.hpp"
#include "msdcee/plume.hpp"
#include "msdcee/random.hpp"
#include "msdcee/terminal.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msdcee {

enum class DiagonalMode { normalized, per_axis };

/// The eight compass moves, in the fixed order used for tie-breaking:
/// up, down, left, right, up-left, up-right, down-left, down-right.
class ActionSet {
public:
    static constexpr std::size_t kCount = 8;

    explicit ActionSet(double step = 2.0, DiagonalMode mode = DiagonalMode::normalized) : step_(step), mode_(mode) {
        if (!(step > 0.0)) throw ConfigError("action set: step must be > 0");
        const double d = mode == DiagonalMode::normalized ? step / std::sqrt(2.0) : step;
        moves_ = {Vec2(0, step), Vec2(0, -step), Vec2(-step, 0), Vec2(step, 0),
                  Vec2(-d, d),   Vec2(d, d),     Vec2(-d, -d),   Vec2(d, -d)};
    }

    const Vec2& operator[](std::size_t i) const { return moves_[i]; }
    std::size_t size() const { return kCount; }
    double step() const { return step_; }
    DiagonalMode mode() const { return mode_; }

    static constexpr std::array<std::string_view, kCount> kNames = {"up", "down", "left", "right",
                                                                    "up-left", "up-right", "down-left", "down-right"};

private:
    double step_;
    DiagonalMode mode_;
    std::array<Vec2, kCount> moves_;
};

/// Inputs of one plan. `indices` holds move indices into the ActionSet for
/// discrete sequences and is empty for continuous ones.
struct ActionSequence {
    std::vector<Vec2> moves;
    std::vector<int> indices;

    std::size_t horizon() const { return moves.size(); }

    static ActionSequence from_indices(const ActionSet& actions, std::vector<int> idx) {
        ActionSequence s;
        s.moves.reserve(idx.size());
        for (int i : idx) s.moves.push_back(actions[static_cast<std::size_t>(i)]);
        s.indices = std::move(idx);
        return s;
    }

    /// x_t, x_{t+1}, ..., x_{t+N}
    std::vector<Vec2> states(const Vec2& start) const {
        std::vector<Vec2> xs;
        xs.reserve(moves.size() + 1);
        xs.push_back(start);
        for (const Vec2& u : moves) xs.push_back(xs.back() + u);
        return xs;
    }
};

struct Weights {
    Mat2 Q = 100.0 * Mat2::Identity();
    Mat2 R = 100.0 * Mat2::Identity();
    Mat2 S = 161.8 * Mat2::Identity();
    int horizon = 10;

    void validate() const {
        const Eigen::SelfAdjointEigenSolver<Mat2> q(Q), r(R), s(S - Q);
        if (!(q.eigenvalues().minCoeff() > 0.0)) throw ConfigError("weights: Q must be positive definite");
        if (!(r.eigenvalues().minCoeff() > 0.0)) throw ConfigError("weights: R must be positive definite");
        if (s.eigenvalues().minCoeff() < -1e-9) throw ConfigError("weights: S must dominate Q");
        if (horizon < 1) throw ConfigError("weights: horizon must be >= 1");
    }
};

enum class PlannerKind { ms_dcee, smpc, ipp, dcee };

inline std::string_view to_string(PlannerKind k) {
    switch (k) {
        case PlannerKind::ms_dcee: return "ms_dcee";
        case PlannerKind::smpc: return "smpc";
        case PlannerKind::ipp: return "ipp";
        case PlannerKind::dcee: return "dcee";
    }
    return "?";
}

inline PlannerKind planner_kind_from_string(std::string_view s) {
    if (s == "ms_dcee" || s == "ms-dcee") return PlannerKind::ms_dcee;
    if (s == "smpc") return PlannerKind::smpc;
    if (s == "ipp") return PlannerKind::ipp;
    if (s == "dcee") return PlannerKind::dcee;
    throw ConfigError("unknown planner kind '" + std::string(s) + "'");
}

enum class SearchStrategy { automatic, exhaustive, sampled, both };

struct SearchConfig {
    SearchStrategy strategy = SearchStrategy::automatic;
    std::size_t random_candidates = 512;
    int exhaustive_max_horizon = 3;  // "automatic" enumerates up to this horizon

    static constexpr int kExhaustiveLimit = 5;
};

struct RolloutConfig {
    std::size_t scenarios = 8;
    std::size_t max_particles = 0;  // 0: roll out the full cloud
    double entropy_cell = 1.0;      // m, IPP histogram resolution
    double delta_max = 0.0;         // per-step clamp on predicted means, 0: off
    std::optional<Box2> mean_box;   // predicted means are projected into this box
    // Hypotheses predicting less than a reading-dependent threshold are treated
    // as predicting zero; bounds the per-step log-weight error. 0: exact.
    double likelihood_tolerance = 1e-12;
    // Test hook: fixed hypothesized readings per scenario (outer) and step (inner).
    std::vector<std::vector<double>> explicit_readings;
};

/// Candidate sequences from x_t, all keeping x_{t+1..t+N} inside `state_box`.
/// Returned in lexicographic order of move indices.
inline std::vector<ActionSequence> generate_candidates(const Vec2& x_t, const ActionSet& actions, int horizon,
                                                       const SearchConfig& cfg, const Box2& state_box,
                                                       RandomStream& stream) {
    if (horizon < 1) throw ConfigError("generate_candidates: horizon must be >= 1");
    SearchStrategy strategy = cfg.strategy;
    if (strategy == SearchStrategy::automatic) {
        strategy = horizon <= cfg.exhaustive_max_horizon ? SearchStrategy::exhaustive : SearchStrategy::sampled;
    }
    const bool want_exhaustive = strategy == SearchStrategy::exhaustive || strategy == SearchStrategy::both;
    const bool want_sampled = strategy == SearchStrategy::sampled || strategy == SearchStrategy::both;
    if (want_exhaustive && horizon > SearchConfig::kExhaustiveLimit) {
        throw ConfigError("generate_candidates: exhaustive search is limited to horizon <= 5");
    }

    std::set<std::vector<int>> found;
    const std::size_t n_act = actions.size();

    if (want_exhaustive) {
        // Depth-first in index order, pruning as soon as a state leaves the box.
        std::vector<int> idx(static_cast<std::size_t>(horizon), 0);
        std::vector<Vec2> pos(static_cast<std::size_t>(horizon) + 1);
        pos[0] = x_t;
        int depth = 0;
        idx[0] = -1;
        while (depth >= 0) {
            auto& a = idx[static_cast<std::size_t>(depth)];
            ++a;
            if (a >= static_cast<int>(n_act)) {
                --depth;
                continue;
            }
            const Vec2 next = pos[static_cast<std::size_t>(depth)] + actions[static_cast<std::size_t>(a)];
            if (!state_box.contains(next)) continue;
            pos[static_cast<std::size_t>(depth) + 1] = next;
            if (depth + 1 == horizon) {
                found.insert(idx);
            } else {
                ++depth;
                idx[static_cast<std::size_t>(depth)] = -1;
            }
        }
    }

    if (want_sampled) {
        for (std::size_t a = 0; a < n_act; ++a) {
            std::vector<int> idx(static_cast<std::size_t>(horizon), static_cast<int>(a));
            Vec2 p = x_t;
            bool ok = true;
            for (int k = 0; k < horizon && ok; ++k) {
                p += actions[a];
                ok = state_box.contains(p);
            }
            if (ok) found.insert(std::move(idx));
        }
        std::vector<int> admissible;
        for (std::size_t c = 0; c < cfg.random_candidates; ++c) {
            std::vector<int> idx;
            idx.reserve(static_cast<std::size_t>(horizon));
            Vec2 p = x_t;
            for (int k = 0; k < horizon; ++k) {
                admissible.clear();
                for (std::size_t a = 0; a < n_act; ++a)
                    if (state_box.contains(p + actions[a])) admissible.push_back(static_cast<int>(a));
                if (admissible.empty()) break;
                const int a = admissible[stream.index(admissible.size())];
                idx.push_back(a);
                p += actions[static_cast<std::size_t>(a)];
            }
            if (static_cast<int>(idx.size()) == horizon) found.insert(std::move(idx));
        }
    }

    std::vector<ActionSequence> out;
    out.reserve(found.size());
    for (const auto& idx : found) out.push_back(ActionSequence::from_indices(actions, idx));
    return out;
}

/// Closed-form stochastic MPC cost about the current posterior:
/// sum_k |x_{t+k} - mean|_Q^2 + |u_k|_R^2 + |x_{t+N} - mean|_S^2 + N tr(Q P) + tr(S P).
struct CostBreakdown {
    double total = 0.0;
    double tracking = 0.0;     // exploitation part
    double uncertainty = 0.0;  // exploration part
};

inline CostBreakdown smpc_cost(const Vec2& x_t, const Vec2& mean, const Mat2& covariance, const ActionSequence& seq,
                               const Weights& w) {
    CostBreakdown c;
    Vec2 x = x_t;
    for (const Vec2& u : seq.moves) {
        c.tracking += quad_form(x - mean, w.Q) + quad_form(u, w.R);
        c.uncertainty += (w.Q * covariance).trace();
        x += u;
    }
    c.tracking += quad_form(x - mean, w.S);
    c.uncertainty += (w.S * covariance).trace();
    c.total = c.tracking + c.uncertainty;
    return c;
}

inline CostBreakdown smpc_cost(const Vec2& x_t, const PosteriorSummary& summary, const ActionSequence& seq,
                               const Weights& w) {
    return smpc_cost(x_t, summary.position_mean(), summary.position_covariance(), seq, w);
}

/// Everything fixed across candidates at one decision.
struct PlanningProblem {
    Vec2 x_t = Vec2::Zero();
    double altitude = 1.0;
    const ParticleSet* particles = nullptr;
    PosteriorSummary anchor;          // reported posterior at time t
    EnvironmentParams env;
    SensorModel sensor;
    Box2 state_box;
    std::optional<Vec2> oracle_mean;  // pins every (predicted) mean when set
};

struct DualCost {
    double total = 0.0;
    double tracking = 0.0;     // J_ET
    double uncertainty = 0.0;  // J_ER
    bool terminal_ok = true;   // every scenario ends inside the terminal ball
    bool diverged = false;
    std::vector<Vec2> terminal_means;  // per scenario
};

/// Predicted-posterior rollout engine for one decision.
///
/// Two things keep this cheap. A reading changes the relative weight only of
/// hypotheses whose prediction at that position is distinguishable from zero;
/// all others share one common factor that cancels on normalization. Those
/// with a prediction below a z-dependent threshold are treated as predicting
/// zero, which perturbs their log-weight by at most `likelihood_tolerance`.
/// Second, each scenario keeps the rollout of the last evaluated sequence with
/// an undo log per step, so candidates sharing a prefix (they arrive sorted)
/// only pay for the steps where they differ.
class RolloutContext {
public:
    RolloutContext(const PlanningProblem& problem, const RolloutConfig& cfg, RandomStream& stream)
        : problem_(problem), cfg_(cfg), plume_(problem.env) {
        if (problem.particles == nullptr) throw ConfigError("rollout: missing particle set");
        const ParticleSet& full = *problem.particles;
        check_weights(full);

        RandomStream down(stream.engine()());
        RandomStream scen(stream.engine()());
        set_ = cfg.max_particles > 0 && full.size() > cfg.max_particles ? thin_systematic(full, cfg.max_particles, down)
                                                                        : full;

        const std::size_t n = set_.size();
        // Coordinates relative to the current mean keep the running second
        // moments well conditioned.
        center_ = problem.anchor.position_mean();
        px_.resize(n);
        py_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            px_[i] = set_.particles[i].position.x() - center_.x();
            py_[i] = set_.particles[i].position.y() - center_.y();
        }
        sigma_zero_ = problem.sensor.sigma(0.0);

        const std::size_t m = cfg.explicit_readings.empty() ? cfg.scenarios : cfg.explicit_readings.size();
        if (m == 0) throw ConfigError("rollout: need at least one measurement scenario");
        scenario_particle_.resize(m);
        scenario_noise_.assign(m, {});
        std::vector<double> cdf(n);
        std::partial_sum(set_.weights.begin(), set_.weights.end(), cdf.begin());
        for (std::size_t s = 0; s < m; ++s) {
            const double u = scen.uniform01() * cdf.back();
            scenario_particle_[s] = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin(),
                                         static_cast<std::ptrdiff_t>(n - 1)));
            scenario_seed_.push_back(scen.engine()());
        }

        const Vec2 mean0 = problem.oracle_mean.value_or(problem.anchor.position_mean());
        const Mat2 cov0 = problem.anchor.position_covariance();
        tracks_.resize(m);
        const Sums initial = exact_sums(set_.weights);
        for (auto& tr : tracks_) {
            tr.w = set_.weights;
            tr.steps.push_back(Step{Vec2::Zero(), {}, {}, initial, mean0, cov0});
        }
    }

    std::size_t scenario_count() const { return scenario_particle_.size(); }
    std::size_t scenario_particle(std::size_t s) const { return scenario_particle_[s]; }
    const ParticleSet& rollout_set() const { return set_; }

    /// Hypothesized reading of scenario s at step k (1-based) at position p.
    double hypothesized_reading(std::size_t s, std::size_t k, const Vec2& p) {
        if (!cfg_.explicit_readings.empty()) return cfg_.explicit_readings[s].at(k - 1);
        const double m = plume_(Vec3(p.x(), p.y(), problem_.altitude), set_.particles[scenario_particle_[s]]);
        return std::max(m + problem_.sensor.sigma(m) * noise(s, k), 0.0);
    }

    DualCost dual_cost(const ActionSequence& seq, const Weights& w, const TerminalIngredients* terminal) {
        const std::vector<Vec2> xs = seq.states(problem_.x_t);
        const std::size_t horizon = seq.horizon();
        const std::size_t m = scenario_count();

        DualCost out;
        out.terminal_means.resize(m);
        double sum_et = 0.0;
        double sum_er = 0.0;
        for (std::size_t s = 0; s < m; ++s) {
            if (!advance(s, seq, xs)) {
                out.diverged = true;
                return out;
            }
            const auto& steps = tracks_[s].steps;
            double et = 0.0;
            double er = 0.0;
            for (std::size_t k = 0; k < horizon; ++k) {
                et += quad_form(xs[k] - steps[k].mean, w.Q) + quad_form(seq.moves[k], w.R);
                er += (w.Q * steps[k].cov).trace();
            }
            const Vec2& mean_n = steps[horizon].mean;
            et += quad_form(xs[horizon] - mean_n, w.S);
            er += (w.S * steps[horizon].cov).trace();
            out.terminal_means[s] = mean_n;
            if (terminal != nullptr && (xs[horizon] - mean_n).norm() > terminal->radius + 1e-9) out.terminal_ok = false;
            sum_et += et;
            sum_er += er;
        }
        out.tracking = sum_et / static_cast<double>(m);
        out.uncertainty = sum_er / static_cast<double>(m);
        out.total = out.tracking + out.uncertainty;
        return out;
    }

    /// Expected entropy reduction of the position histogram at the end of the sequence.
    double information_gain(const ActionSequence& seq, const GridSpec& grid, bool& diverged) {
        ensure_cells(grid);
        const std::vector<Vec2> xs = seq.states(problem_.x_t);
        const std::size_t m = scenario_count();
        std::vector<double> w(set_.size());
        const double h0 = histogram_entropy(set_.weights, cells_, scratch_);
        double mean_h = 0.0;
        diverged = false;
        for (std::size_t s = 0; s < m; ++s) {
            if (!advance(s, seq, xs)) {
                diverged = true;
                return 0.0;
            }
            const auto& tw = tracks_[s].w;
            const double total = std::accumulate(tw.begin(), tw.end(), 0.0);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = tw[i] / total;
            mean_h += histogram_entropy(w, cells_, scratch_);
        }
        return h0 - mean_h / static_cast<double>(m);
    }

private:
    // Hypotheses whose prediction at a position can matter for some reading.
    struct Entry {
        std::vector<std::uint32_t> index;
        std::vector<double> predicted;
        std::vector<double> inv_sigma;
        std::vector<double> log_sigma;
    };

    // Running sums of w, w x, w y, w x^2, w x y, w y^2 (centered coordinates).
    using Sums = std::array<double, 6>;

    struct Step {
        Vec2 move;
        std::vector<std::pair<std::uint32_t, double>> undo;  // (particle, weight before)
        std::vector<double> snapshot;                        // full weights before, when rescaled
        Sums sums{};                                         // weighted moments after this step
        Vec2 mean;
        Mat2 cov;
    };

    struct Track {
        std::vector<double> w;    // unnormalized weights
        std::vector<Step> steps;  // steps[0] is the current posterior
    };

    // Below this a prediction is zero for any reading up to 1e10.
    static constexpr double kNegligible = 1e-30;

    static ParticleSet thin_systematic(const ParticleSet& ps, std::size_t count, RandomStream& stream) {
        ParticleSet out;
        out.estimate_rate = ps.estimate_rate;
        out.generation = ps.generation;
        out.particles.reserve(count);
        const double step = 1.0 / static_cast<double>(count);
        double u = stream.uniform01() * step;
        double cumulative = ps.weights[0];
        std::size_t j = 0;
        for (std::size_t i = 0; i < count; ++i) {
            while (u > cumulative && j + 1 < ps.size()) cumulative += ps.weights[++j];
            out.particles.push_back(ps.particles[j]);
            u += step;
        }
        out.weights.assign(count, step);
        return out;
    }

    static std::pair<std::int64_t, std::int64_t> key_of(const Vec2& p) {
        return {std::llround(p.x() * 1e6), std::llround(p.y() * 1e6)};
    }

    struct KeyHash {
        std::size_t operator()(const std::pair<std::int64_t, std::int64_t>& k) const {
            return std::hash<std::int64_t>()(k.first) * 0x9e3779b97f4a7c15ull ^ std::hash<std::int64_t>()(k.second);
        }
    };

    const Entry& entry(const Vec2& p) {
        const auto key = key_of(p);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Entry e;
        const bool exact = !(cfg_.likelihood_tolerance > 0.0);
        const Vec3 agent(p.x(), p.y(), problem_.altitude);
        for (std::size_t i = 0; i < set_.size(); ++i) {
            const double m = plume_(agent, set_.particles[i]);
            if (!exact && !(m > kNegligible)) continue;
            const double sigma = problem_.sensor.sigma(m);
            e.index.push_back(static_cast<std::uint32_t>(i));
            e.predicted.push_back(m);
            e.inv_sigma.push_back(1.0 / sigma);
            e.log_sigma.push_back(std::log(sigma));
        }
        return cache_.emplace(key, std::move(e)).first->second;
    }

    // Standard normal draw of scenario s at step k, independent of evaluation order.
    double noise(std::size_t s, std::size_t k) {
        auto& seq = scenario_noise_[s];
        while (seq.size() < k) {
            RandomStream r(derive_seed(scenario_seed_[s], {static_cast<std::uint64_t>(seq.size())}));
            seq.push_back(r.normal());
        }
        return seq[k - 1];
    }

    // Brings scenario s to the end of `seq`, reusing the shared prefix.
    bool advance(std::size_t s, const ActionSequence& seq, const std::vector<Vec2>& xs) {
        Track& tr = tracks_[s];
        std::size_t common = 0;
        while (common + 1 < tr.steps.size() && common < seq.horizon() &&
               tr.steps[common + 1].move == seq.moves[common]) {
            ++common;
        }
        while (tr.steps.size() > common + 1) {
            Step& st = tr.steps.back();
            if (!st.snapshot.empty()) {
                tr.w.swap(st.snapshot);
            } else {
                for (auto it = st.undo.rbegin(); it != st.undo.rend(); ++it) tr.w[it->first] = it->second;
            }
            tr.steps.pop_back();
        }
        for (std::size_t k = common; k < seq.horizon(); ++k) {
            const double z = hypothesized_reading(s, k + 1, xs[k + 1]);
            Step st;
            st.move = seq.moves[k];
            st.sums = tr.steps.back().sums;
            if (!absorb(tr, st, xs[k + 1], z)) return false;
            const auto [raw_mean, cov] = moments(st.sums);
            st.mean = next_mean(tr.steps.back().mean, raw_mean);
            st.cov = cov;
            tr.steps.push_back(std::move(st));
        }
        return true;
    }

    // Multiplies the weights by the likelihood of reading z at p, relative to
    // the likelihood of a zero prediction. False (weights untouched) on underflow.
    bool absorb(Track& tr, Step& st, const Vec2& p, double z) {
        const Entry& e = entry(p);
        const double r0 = z / sigma_zero_;
        const double ll_zero = -0.5 * r0 * r0 - std::log(sigma_zero_);
        // |ll(m) - ll(0)| <= z m / sigma0^2 for predictions under the noise floor.
        const double tau = cfg_.likelihood_tolerance > 0.0
                               ? cfg_.likelihood_tolerance * sigma_zero_ * sigma_zero_ / std::max(z, sigma_zero_)
                               : -1.0;
        delta_.clear();
        double d_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < e.index.size(); ++j) {
            if (!(e.predicted[j] > tau)) continue;
            const double r = (z - e.predicted[j]) * e.inv_sigma[j];
            const double d = -0.5 * r * r - e.log_sigma[j] - ll_zero;
            delta_.emplace_back(e.index[j], d);
            d_max = std::max(d_max, d);
        }
        if (delta_.empty()) return true;

        const double before = st.sums[0];
        bool recompute = false;
        if (d_max > kRescaleAbove) {
            // Shift everything by d_max so the favored hypotheses cannot overflow.
            st.snapshot = tr.w;
            const double far = std::exp(-d_max);
            for (double& v : tr.w) v *= far;
            for (const auto& [i, d] : delta_) tr.w[i] = st.snapshot[i] * std::exp(d - d_max);
            recompute = true;
        } else {
            st.undo.reserve(delta_.size());
            Sums& a = st.sums;
            for (const auto& [i, d] : delta_) {
                const double old = tr.w[i];
                st.undo.emplace_back(i, old);
                tr.w[i] = old * exp_small(d);
                const double dw = tr.w[i] - old;
                const double x = px_[i], y = py_[i];
                a[0] += dw;
                a[1] += dw * x;
                a[2] += dw * y;
                a[3] += dw * x * x;
                a[4] += dw * x * y;
                a[5] += dw * y * y;
            }
            // Large cancellations lose the running sums' accuracy.
            recompute = !(st.sums[0] > 1e-3 * before);
        }
        if (recompute) st.sums = exact_sums(tr.w);

        const double total = st.sums[0];
        if (!(total > 0.0) || !std::isfinite(total)) {
            if (!st.snapshot.empty()) tr.w.swap(st.snapshot);
            else
                for (auto it = st.undo.rbegin(); it != st.undo.rend(); ++it) tr.w[it->first] = it->second;
            return false;
        }
        if (total < 1e-100 || total > 1e100) {
            if (st.snapshot.empty()) {
                st.snapshot = tr.w;
                for (auto it = st.undo.rbegin(); it != st.undo.rend(); ++it) st.snapshot[it->first] = it->second;
                st.undo.clear();
            }
            for (double& v : tr.w) v /= total;
            st.sums = exact_sums(tr.w);
        }
        return true;
    }

    // exp(d); most updates are tiny perturbations where the series is exact to
    // double precision and much cheaper than the library call.
    static double exp_small(double d) {
        if (std::abs(d) < 1e-4) return 1.0 + d * (1.0 + d * (0.5 + d * (1.0 / 6.0 + d * (1.0 / 24.0))));
        return std::exp(d);
    }

    Sums exact_sums(const std::vector<double>& w) const {
        Sums a{};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double x = px_[i], y = py_[i];
            a[0] += w[i];
            a[1] += w[i] * x;
            a[2] += w[i] * y;
            a[3] += w[i] * x * x;
            a[4] += w[i] * x * y;
            a[5] += w[i] * y * y;
        }
        return a;
    }

    std::pair<Vec2, Mat2> moments(const Sums& a) const {
        const double mx = a[1] / a[0];
        const double my = a[2] / a[0];
        const double cxx = std::max(a[3] / a[0] - mx * mx, 0.0);
        const double cyy = std::max(a[5] / a[0] - my * my, 0.0);
        const double cxy = a[4] / a[0] - mx * my;
        Mat2 cov;
        cov << cxx, cxy, cxy, cyy;
        return {center_ + Vec2(mx, my), cov};
    }

    Vec2 next_mean(const Vec2& previous, const Vec2& raw) const {
        if (problem_.oracle_mean) return *problem_.oracle_mean;
        Vec2 m = raw;
        if (cfg_.delta_max > 0.0) {
            m = m.cwiseMax(previous - Vec2::Constant(cfg_.delta_max)).cwiseMin(previous + Vec2::Constant(cfg_.delta_max));
        }
        if (cfg_.mean_box) m = cfg_.mean_box->clamp(m);
        return m;
    }

    void ensure_cells(const GridSpec& grid) {
        if (!cells_.empty()) return;
        cells_.resize(set_.size());
        for (std::size_t i = 0; i < set_.size(); ++i) {
            cells_[i] = grid.cell_of(px_[i] + center_.x(), py_[i] + center_.y());
        }
        scratch_.assign(grid.cells(), 0.0);
    }

    static constexpr double kRescaleAbove = 300.0;

    const PlanningProblem& problem_;
    RolloutConfig cfg_;
    PlumeKernel plume_;
    ParticleSet set_;
    double sigma_zero_ = 0.0;
    Vec2 center_ = Vec2::Zero();
    std::vector<double> px_, py_;
    std::vector<std::size_t> scenario_particle_;
    std::vector<std::uint64_t> scenario_seed_;
    std::vector<std::vector<double>> scenario_noise_;
    std::vector<Track> tracks_;
    std::vector<std::pair<std::uint32_t, double>> delta_;
    std::unordered_map<std::pair<std::int64_t, std::int64_t>, Entry, KeyHash> cache_;
    std::vector<std::size_t> cells_;
    std::vector<double> scratch_;
};

/// Dual (MS-DCEE) cost of one sequence: Monte Carlo average over measurement
/// scenarios of the tracking and uncertainty sums along the predicted posterior.
inline DualCost dcee_cost(const PlanningProblem& problem, const ActionSequence& seq, const Weights& w,
                          const RolloutConfig& cfg, RandomStream& stream,
                          const TerminalIngredients* terminal = nullptr) {
    RolloutContext ctx(problem, cfg, stream);
    return ctx.dual_cost(seq, w, terminal);
}

struct CandidateDiagnostics {
    std::vector<int> indices;
    double cost = 0.0;
    double tracking = 0.0;
    double uncertainty = 0.0;
    bool feasible = true;
    bool diverged = false;
};

struct PlanResult {
    ActionSequence sequence;
    std::vector<Vec2> states;
    double cost = 0.0;
    double tracking = 0.0;
    double uncertainty = 0.0;
    double information_gain = 0.0;  // IPP objective
    bool feasible = true;           // false: no candidate met the terminal constraint
    bool terminal_enforced = false;
    std::size_t evaluated = 0;
    std::size_t feasible_count = 0;
    std::vector<Vec2> terminal_means;
    std::vector<CandidateDiagnostics> diagnostics;
    std::vector<DualCost> reference_costs;  // one per PlannerSetup::reference_sequences
};

struct PlannerSetup {
    PlannerKind kind = PlannerKind::ms_dcee;
    Weights weights;
    ActionSet actions{};
    SearchConfig search;
    RolloutConfig rollout;
    std::optional<TerminalIngredients> terminal;
    bool enforce_terminal = true;
    bool keep_diagnostics = false;
    // Evaluated with the same scenarios as the candidates but never selected;
    // used to price the shifted previous plan.
    std::vector<ActionSequence> reference_sequences;

    int effective_horizon() const { return kind == PlannerKind::dcee ? 1 : weights.horizon; }
};

namespace detail {

// Strict improvement only, so ties keep the lexicographically first candidate.
inline bool better(double a, double b) { return a < b; }

}  // namespace detail

/// Receding-horizon optimization over the candidate set.
inline PlanResult optimize(const PlanningProblem& problem, const PlannerSetup& setup, RandomStream& stream) {
    const int horizon = setup.effective_horizon();
    RandomStream cand_stream(stream.engine()());
    RandomStream roll_stream(stream.engine()());
    std::vector<ActionSequence> candidates =
        generate_candidates(problem.x_t, setup.actions, horizon, setup.search, problem.state_box, cand_stream);

    PlanResult best;
    best.terminal_enforced = false;
    if (candidates.empty()) {
        best.feasible = false;
        return best;
    }

    Weights w = setup.weights;
    w.horizon = horizon;
    if (setup.kind == PlannerKind::dcee) w.S = w.Q;

    if (setup.kind == PlannerKind::smpc) {
        const Vec2 mean = problem.oracle_mean.value_or(problem.anchor.position_mean());
        const Mat2 cov = problem.anchor.position_covariance();
        double best_cost = std::numeric_limits<double>::infinity();
        for (const auto& c : candidates) {
            const CostBreakdown cb = smpc_cost(problem.x_t, mean, cov, c, w);
            ++best.evaluated;
            if (setup.keep_diagnostics) {
                best.diagnostics.push_back({c.indices, cb.total, cb.tracking, cb.uncertainty, true, false});
            }
            if (detail::better(cb.total, best_cost)) {
                best_cost = cb.total;
                best.sequence = c;
                best.cost = cb.total;
                best.tracking = cb.tracking;
                best.uncertainty = cb.uncertainty;
            }
        }
        best.feasible_count = best.evaluated;
        best.states = best.sequence.states(problem.x_t);
        return best;
    }

    RolloutContext ctx(problem, setup.rollout, roll_stream);

    if (setup.kind == PlannerKind::ipp) {
        GridSpec grid{problem.state_box, setup.rollout.entropy_cell};
        double best_gain = -std::numeric_limits<double>::infinity();
        bool found = false;
        for (const auto& c : candidates) {
            bool diverged = false;
            const double gain = ctx.information_gain(c, grid, diverged);
            ++best.evaluated;
            if (setup.keep_diagnostics) best.diagnostics.push_back({c.indices, -gain, 0.0, 0.0, !diverged, diverged});
            if (diverged) continue;
            ++best.feasible_count;
            if (!found || gain > best_gain) {
                found = true;
                best_gain = gain;
                best.sequence = c;
                best.information_gain = gain;
                best.cost = -gain;
            }
        }
        best.feasible = found;
        if (!found) best.sequence = candidates.front();
        best.states = best.sequence.states(problem.x_t);
        return best;
    }

    const bool enforce = setup.kind == PlannerKind::ms_dcee && setup.enforce_terminal && setup.terminal.has_value();
    const TerminalIngredients* terminal = enforce ? &*setup.terminal : nullptr;
    best.terminal_enforced = enforce;

    for (const auto& ref : setup.reference_sequences) best.reference_costs.push_back(ctx.dual_cost(ref, w, terminal));

    double best_feasible = std::numeric_limits<double>::infinity();
    double best_any = std::numeric_limits<double>::infinity();
    std::optional<std::pair<ActionSequence, DualCost>> feasible_choice, any_choice;
    for (const auto& c : candidates) {
        DualCost dc = ctx.dual_cost(c, w, terminal);
        ++best.evaluated;
        if (setup.keep_diagnostics) {
            best.diagnostics.push_back({c.indices, dc.total, dc.tracking, dc.uncertainty, dc.terminal_ok, dc.diverged});
        }
        if (dc.diverged) continue;
        if (detail::better(dc.total, best_any)) {
            best_any = dc.total;
            any_choice.emplace(c, dc);
        }
        if (dc.terminal_ok) {
            ++best.feasible_count;
            if (detail::better(dc.total, best_feasible)) {
                best_feasible = dc.total;
                feasible_choice.emplace(c, dc);
            }
        }
    }

    // Without a feasible candidate the terminal constraint is dropped for this
    // step and the result is flagged infeasible.
    const auto& chosen = feasible_choice ? feasible_choice : any_choice;
    best.feasible = feasible_choice.has_value();
    if (!chosen) {
        best.sequence = candidates.front();
        best.feasible = false;
    } else {
        best.sequence = chosen->first;
        best.cost = chosen->second.total;
        best.tracking = chosen->second.tracking;
        best.uncertainty = chosen->second.uncertainty;
        best.terminal_means = chosen->second.terminal_means;
    }
    best.states = best.sequence.states(problem.x_t);
    return best;
}

/// Entropy-driven informative path planning.
inline PlanResult ipp_entropy_plan(const PlanningProblem& problem, int horizon, const SearchConfig& search,
                                   const RolloutConfig& rollout, RandomStream& stream,
                                   const ActionSet& actions = ActionSet{}) {
    PlannerSetup setup;
    setup.kind = PlannerKind::ipp;
    setup.weights.horizon = horizon;
    setup.search = search;
    setup.rollout = rollout;
    setup.actions = actions;
    return optimize(problem, setup, stream);
}

}  // namespace msdcee
