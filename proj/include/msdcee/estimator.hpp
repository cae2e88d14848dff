#pragma once

// Sequential Bayesian estimation of the source term with a weighted particle
// cloud: real measurement updates, hypothesized (predicted) updates used by
// the planners, posterior summaries and the particle-filter housekeeping.

#include "msdcee/common.hpp"
#include "msdcee/plume.hpp"
#include "msdcee/random.hpp"

#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace msdcee {

/// Raised when every particle's likelihood underflows, i.e. the data is
/// incompatible with all hypotheses.
class EstimatorDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EstimatorConfig {
    std::size_t particles = 10000;
    bool estimate_rate = false;
    double known_rate = 5.0;          // used when the rate is not estimated
    double rate_lo = 1.0;             // prior interval when it is
    double rate_hi = 10.0;
    double source_altitude = 0.0;     // known p_sz
    double resample_threshold = 0.5;  // resample when ESS < threshold * n
    double jitter_scale = 0.02;

    void validate() const {
        if (particles < 2) throw ConfigError("estimator: particle count must be >= 2");
        if (estimate_rate && !(rate_lo > 0.0 && rate_hi >= rate_lo)) {
            throw ConfigError("estimator: need 0 < rate_lo <= rate_hi");
        }
        if (!estimate_rate && !(known_rate > 0.0)) throw ConfigError("estimator: known_rate must be > 0");
        if (!(resample_threshold >= 0.0 && resample_threshold <= 1.0)) {
            throw ConfigError("estimator: resample_threshold must lie in [0, 1]");
        }
        if (!(jitter_scale >= 0.0)) throw ConfigError("estimator: jitter_scale must be >= 0");
    }

    bool operator==(const EstimatorConfig&) const = default;
};

/// Weighted hypotheses over the unknown source term. Treated as an immutable
/// snapshot: every update returns a new set.
struct ParticleSet {
    std::vector<SourceTerm> particles;
    std::vector<double> weights;
    std::size_t generation = 0;
    bool estimate_rate = false;

    std::size_t size() const { return particles.size(); }
    std::size_t dims() const { return estimate_rate ? 3 : 2; }

    /// Estimated coordinates of particle i: (x, y) or (x, y, q).
    Eigen::VectorXd state(std::size_t i) const {
        Eigen::VectorXd v(dims());
        v(0) = particles[i].position.x();
        v(1) = particles[i].position.y();
        if (estimate_rate) v(2) = particles[i].rate;
        return v;
    }
};

struct PosteriorSummary {
    Eigen::VectorXd mean;        // (x, y) or (x, y, q)
    Eigen::MatrixXd covariance;  // over the same coordinates
    double trace_position = 0.0;

    Vec2 position_mean() const { return mean.head<2>(); }
    Mat2 position_covariance() const { return covariance.topLeftCorner<2, 2>(); }
};

/// One realized (action, measurement) pair of the information sequence.
struct InfoEntry {
    Vec2 action = Vec2::Zero();
    double measurement = 0.0;
};

/// Information sequence: initial measurement followed by action/measurement pairs.
struct InfoState {
    double initial_measurement = 0.0;
    std::vector<InfoEntry> entries;
};

inline void check_weights(const ParticleSet& ps) {
    if (ps.particles.size() != ps.weights.size() || ps.particles.empty()) {
        throw ConfigError("particle set: particles and weights must be non-empty and equal length");
    }
}

inline ParticleSet init_prior(const Box2& domain, std::size_t particle_count, RandomStream& stream,
                              const EstimatorConfig& cfg = {}) {
    if (domain.empty()) throw ConfigError("init_prior: empty domain");
    if (particle_count < 2) throw ConfigError("init_prior: particle count must be >= 2");
    ParticleSet ps;
    ps.estimate_rate = cfg.estimate_rate;
    ps.particles.reserve(particle_count);
    for (std::size_t i = 0; i < particle_count; ++i) {
        SourceTerm s;
        // uniform_real_distribution requires lo < hi; a collapsed axis is a point.
        const double x = domain.hi.x() > domain.lo.x() ? stream.uniform(domain.lo.x(), domain.hi.x()) : domain.lo.x();
        const double y = domain.hi.y() > domain.lo.y() ? stream.uniform(domain.lo.y(), domain.hi.y()) : domain.lo.y();
        s.position = Vec3(x, y, cfg.source_altitude);
        if (cfg.estimate_rate) {
            s.rate = cfg.rate_hi > cfg.rate_lo ? stream.uniform(cfg.rate_lo, cfg.rate_hi) : cfg.rate_lo;
        } else {
            s.rate = cfg.known_rate;
        }
        ps.particles.push_back(s);
    }
    ps.weights.assign(particle_count, 1.0 / static_cast<double>(particle_count));
    return ps;
}

/// Gaussian log-density of `reading` about `predicted`, with the sensor's
/// signal-dependent standard deviation.
inline double log_likelihood_from_prediction(double reading, double predicted, const SensorModel& sensor) {
    const double sigma = sensor.sigma(predicted);
    const double r = (reading - predicted) / sigma;
    return -0.5 * r * r - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double likelihood(double reading, const SourceTerm& hypothesis, const Vec3& agent,
                         const EnvironmentParams& env, const SensorModel& sensor) {
    const double m = concentration(agent, hypothesis, env);
    return std::exp(log_likelihood_from_prediction(reading, m, sensor));
}

// exp() of anything below this is zero in double precision.
inline constexpr double kLogUnderflow = -745.0;

/// Multiplies each weight by exp(log_likelihood[i]) and renormalizes.
/// Pure reweighting: no resampling, generation incremented.
inline ParticleSet reweight(const ParticleSet& ps, std::span<const double> log_likelihood) {
    check_weights(ps);
    if (log_likelihood.size() != ps.size()) throw ConfigError("reweight: likelihood length mismatch");

    double best_ll = -std::numeric_limits<double>::infinity();
    for (double v : log_likelihood) best_ll = std::max(best_ll, v);

    double best_joint = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps.weights[i] > 0.0) best_joint = std::max(best_joint, std::log(ps.weights[i]) + log_likelihood[i]);
    }
    if (!(best_joint >= kLogUnderflow)) {
        throw EstimatorDivergence("bayes update: total posterior weight underflows");
    }

    ParticleSet out = ps;
    // Shift by the best likelihood first so a flat likelihood is an exact no-op.
    double total = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        out.weights[i] = ps.weights[i] * std::exp(log_likelihood[i] - best_ll);
        total += out.weights[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
        // All mass sat on particles the shift pushed below the double range.
        const double shift = best_joint;
        total = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            out.weights[i] = ps.weights[i] > 0.0
                                 ? std::exp(std::log(ps.weights[i]) + log_likelihood[i] - shift)
                                 : 0.0;
            total += out.weights[i];
        }
    }
    for (double& w : out.weights) w /= total;
    out.generation = ps.generation + 1;
    return out;
}

inline std::vector<double> log_likelihoods(const ParticleSet& ps, double reading, const Vec3& agent,
                                           const EnvironmentParams& env, const SensorModel& sensor) {
    const PlumeKernel plume(env);
    std::vector<double> ll(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        ll[i] = log_likelihood_from_prediction(reading, plume(agent, ps.particles[i]), sensor);
    }
    return ll;
}

inline double effective_sample_size(const ParticleSet& ps) {
    double s = 0.0;
    for (double w : ps.weights) s += w * w;
    return 1.0 / s;
}

/// Weighted mean and covariance. When `projection` is given, the reported
/// position mean is clamped into that box; the covariance stays about the raw mean.
inline PosteriorSummary summarize(const ParticleSet& ps, const std::optional<Box2>& projection = std::nullopt) {
    check_weights(ps);
    const std::size_t d = ps.dims();
    PosteriorSummary out;
    out.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < ps.size(); ++i) out.mean += ps.weights[i] * ps.state(i);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Eigen::VectorXd e = ps.state(i) - out.mean;
        out.covariance.noalias() += ps.weights[i] * e * e.transpose();
    }
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    if (projection) out.mean.head<2>() = projection->clamp(out.mean.head<2>());
    out.trace_position = out.covariance(0, 0) + out.covariance(1, 1);
    return out;
}

struct JitterBounds {
    Box2 domain;
    double rate_lo = 0.0;
    double rate_hi = std::numeric_limits<double>::infinity();
};

/// Systematic resampling followed by Gaussian jitter whose per-coordinate
/// scale is jitter_scale times the current posterior std. Weights reset uniform.
inline ParticleSet resample_and_jitter(const ParticleSet& ps, RandomStream& stream, double jitter_scale,
                                       const std::optional<JitterBounds>& bounds = std::nullopt) {
    check_weights(ps);
    const std::size_t n = ps.size();
    const PosteriorSummary summary = summarize(ps);
    const Eigen::VectorXd stddev = summary.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

    ParticleSet out;
    out.estimate_rate = ps.estimate_rate;
    out.generation = ps.generation;
    out.particles.reserve(n);

    const double step = 1.0 / static_cast<double>(n);
    double u = stream.uniform01() * step;
    double cumulative = ps.weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (u > cumulative && j + 1 < n) cumulative += ps.weights[++j];
        out.particles.push_back(ps.particles[j]);
        u += step;
    }

    if (jitter_scale > 0.0) {
        for (SourceTerm& p : out.particles) {
            Vec2 xy(p.position.x() + jitter_scale * stddev(0) * stream.normal(),
                    p.position.y() + jitter_scale * stddev(1) * stream.normal());
            if (bounds) xy = bounds->domain.clamp(xy);
            p.position.x() = xy.x();
            p.position.y() = xy.y();
            if (ps.estimate_rate) {
                p.rate += jitter_scale * stddev(2) * stream.normal();
                if (bounds) p.rate = std::clamp(p.rate, bounds->rate_lo, bounds->rate_hi);
            }
        }
    }
    out.weights.assign(n, step);
    return out;
}

/// Real measurement update. Resamples with jitter when the effective sample
/// size falls below cfg.resample_threshold * n.
inline ParticleSet bayes_update(const ParticleSet& ps, double reading, const Vec3& agent,
                                const EnvironmentParams& env, const SensorModel& sensor, RandomStream& stream,
                                const EstimatorConfig& cfg, const std::optional<JitterBounds>& bounds = std::nullopt) {
    const std::vector<double> ll = log_likelihoods(ps, reading, agent, env, sensor);
    ParticleSet out = reweight(ps, ll);
    if (effective_sample_size(out) < cfg.resample_threshold * static_cast<double>(out.size())) {
        out = resample_and_jitter(out, stream, cfg.jitter_scale, bounds);
    }
    return out;
}

/// Predicted posterior under a hypothesized reading. Never resamples.
inline ParticleSet predicted_update(const ParticleSet& ps, double hypothesized_reading, const Vec3& agent,
                                    const EnvironmentParams& env, const SensorModel& sensor) {
    return reweight(ps, log_likelihoods(ps, hypothesized_reading, agent, env, sensor));
}

struct GridSpec {
    Box2 box;
    double cell = 1.0;  // m

    std::size_t nx() const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((box.hi.x() - box.lo.x()) / cell)));
    }
    std::size_t ny() const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((box.hi.y() - box.lo.y()) / cell)));
    }
    std::size_t cells() const { return nx() * ny(); }

    /// Cell index of a planar point; points outside the box land in edge cells.
    std::size_t cell_of(double x, double y) const {
        const auto clampi = [](double v, std::size_t n) {
            if (!(v > 0.0)) return std::size_t{0};
            return std::min(static_cast<std::size_t>(v), n - 1);
        };
        return clampi((y - box.lo.y()) / cell, ny()) * nx() + clampi((x - box.lo.x()) / cell, nx());
    }
};

/// Shannon entropy (nats) of a weight vector histogrammed into cells.
inline double histogram_entropy(std::span<const double> weights, std::span<const std::size_t> cell_index,
                                std::vector<double>& scratch) {
    for (std::size_t i = 0; i < weights.size(); ++i) scratch[cell_index[i]] += weights[i];
    double h = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double& m = scratch[cell_index[i]];
        if (m > 0.0) {
            h -= m * std::log(m);
            m = 0.0;
        }
    }
    return std::max(h, 0.0);
}

inline double posterior_entropy(const ParticleSet& ps, const GridSpec& grid) {
    check_weights(ps);
    if (!(grid.cell > 0.0)) throw ConfigError("posterior_entropy: cell size must be > 0");
    std::vector<std::size_t> idx(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        idx[i] = grid.cell_of(ps.particles[i].position.x(), ps.particles[i].position.y());
    }
    std::vector<double> scratch(grid.cells(), 0.0);
    return histogram_entropy(ps.weights, idx, scratch);
}

/// Debug dump of a particle cloud: x,y[,q],weight.
inline void write_particles_csv(std::ostream& os, const ParticleSet& ps) {
    os << (ps.estimate_rate ? "x,y,q,weight\n" : "x,y,weight\n");
    os.precision(17);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        os << ps.particles[i].position.x() << ',' << ps.particles[i].position.y() << ',';
        if (ps.estimate_rate) os << ps.particles[i].rate << ',';
        os << ps.weights[i] << '\n';
    }
}

}  // namespace msdcee
