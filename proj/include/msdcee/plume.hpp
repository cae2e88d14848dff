#pragma once

// Gaussian plume forward model and simulated concentration sensor.

#include "msdcee/common.hpp"
#include "msdcee/random.hpp"

namespace msdcee {

/// Meteorological parameters of the plume model.
struct EnvironmentParams {
    double wind_speed = 4.0;                       // m/s
    double wind_direction = std::numbers::pi / 2;  // rad
    double diffusivity = 1.0;                      // m^2/s
    double lifetime = 8.0;                         // s

    /// Mixing length, always recomputed from the other fields.
    double mixing() const {
        return std::sqrt(diffusivity * lifetime /
                         (1.0 + wind_speed * wind_speed * lifetime / (4.0 * diffusivity)));
    }

    void validate() const {
        if (!(wind_speed >= 0.0) || !(diffusivity > 0.0) || !(lifetime > 0.0) ||
            !std::isfinite(wind_direction)) {
            throw ConfigError("environment: need wind_speed >= 0, diffusivity > 0, lifetime > 0");
        }
    }

    bool operator==(const EnvironmentParams&) const = default;
};

struct SourceTerm {
    Vec3 position = Vec3::Zero();  // m
    double rate = 5.0;             // g/s

    bool operator==(const SourceTerm&) const = default;
};

struct SensorModel {
    double noise_fraction = 0.1;  // std as a fraction of the signal
    double noise_floor = 1e-4;    // g/m^3

    double sigma(double signal) const { return std::max(noise_fraction * signal, noise_floor); }

    void validate() const {
        if (!(noise_fraction >= 0.0 && noise_fraction < 1.0) || !(noise_floor > 0.0)) {
            throw ConfigError("sensor: need 0 <= noise_fraction < 1 and noise_floor > 0");
        }
    }

    bool operator==(const SensorModel&) const = default;
};

inline constexpr double kDefaultSeparationEps = 1e-6;

/// Precomputed coefficients of the plume equation for one environment. All
/// hot loops go through this so the exponentials are fused into one call.
class PlumeKernel {
public:
    explicit PlumeKernel(const EnvironmentParams& env, double separation_eps = kDefaultSeparationEps)
        : eps_(separation_eps) {
        env.validate();
        inv_mixing_ = 1.0 / env.mixing();
        prefactor_ = 1.0 / (4.0 * std::numbers::pi * env.diffusivity);
        wind_x_ = env.wind_speed * std::cos(env.wind_direction) / (2.0 * env.diffusivity);
        // The crosswind coefficient uses the particle lifetime as written in
        // the model; see README for the note on this asymmetry.
        wind_y_ = env.wind_speed * std::sin(env.wind_direction) / (2.0 * env.lifetime);
    }

    /// Concentration in g/m^3 at `x` from a release at `source` with rate `rate`.
    double operator()(const Vec3& x, const Vec3& source, double rate) const {
        const Vec3 d = x - source;
        const double r = d.norm();
        if (r < eps_) {
            throw ModelError("plume evaluated at the source location (separation below epsilon)");
        }
        const double exponent =
            -r * inv_mixing_ + (source.x() - x.x()) * wind_x_ + (source.y() - x.y()) * wind_y_;
        return rate * prefactor_ / r * std::exp(exponent);
    }

    double operator()(const Vec3& x, const SourceTerm& s) const { return (*this)(x, s.position, s.rate); }

    double separation_eps() const { return eps_; }

private:
    double eps_;
    double inv_mixing_ = 0.0;
    double prefactor_ = 0.0;
    double wind_x_ = 0.0;
    double wind_y_ = 0.0;
};

inline double concentration(const Vec3& x, const SourceTerm& source, const EnvironmentParams& env,
                            double separation_eps = kDefaultSeparationEps) {
    return PlumeKernel(env, separation_eps)(x, source);
}

/// Noisy sensor reading: true concentration plus Gaussian noise with
/// std max(noise_fraction * M, noise_floor), clipped at zero.
inline double measure(const Vec3& x, const SourceTerm& source, const EnvironmentParams& env,
                      const SensorModel& sensor, RandomStream& stream,
                      double separation_eps = kDefaultSeparationEps) {
    const double m = concentration(x, source, env, separation_eps);
    const double z = m + sensor.sigma(m) * stream.normal();
    return std::max(z, 0.0);
}

}  // namespace msdcee
