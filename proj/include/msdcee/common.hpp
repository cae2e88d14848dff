#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace msdcee {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;

// Raised when a model is evaluated where it is singular or undefined.
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised for invalid inputs to any public operation.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Axis-aligned planar box [lo, hi].
struct Box2 {
    Vec2 lo{0.0, 0.0};
    Vec2 hi{0.0, 0.0};

    bool empty() const { return (hi.array() < lo.array()).any(); }

    bool contains(const Vec2& p, double tol = 1e-9) const {
        return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
    }

    Vec2 clamp(const Vec2& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

    Vec2 center() const { return 0.5 * (lo + hi); }

    // Box shrunk by `margin` on every side (may become empty).
    Box2 shrunk(double margin) const {
        return Box2{lo.array() + margin, hi.array() - margin};
    }

    bool operator==(const Box2&) const = default;
};

inline double sq(double v) { return v * v; }

inline double quad_form(const Vec2& v, const Mat2& m) { return v.dot(m * v); }

}  // namespace msdcee
