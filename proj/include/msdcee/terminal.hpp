#pragma once

// Terminal ingredients of the receding-horizon search: terminal weight from
// the discrete Lyapunov equation of the closed loop x+ = (I + K) x, and the
// largest terminal ball compatible with the state/input containments.

#include "msdcee/common.hpp"

#include <Eigen/Eigenvalues>

#include <string>
#include <vector>

namespace msdcee {

class InstabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoFeasibleRadiusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double spectral_radius(const Mat2& m) {
    const Eigen::EigenSolver<Mat2> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// max |(A^T S A - S) + Q + K^T R K| entrywise, with A = I + K.
inline double lyapunov_residual(const Mat2& K, const Mat2& Q, const Mat2& R, const Mat2& S) {
    const Mat2 A = Mat2::Identity() + K;
    return (A.transpose() * S * A - S + Q + K.transpose() * R * K).cwiseAbs().maxCoeff();
}

/// Solves (I+K)^T S (I+K) - S = -Q - K^T R K for S.
inline Mat2 solve_terminal_weight(const Mat2& K, const Mat2& Q, const Mat2& R) {
    const Mat2 A = Mat2::Identity() + K;
    if (!(spectral_radius(A) < 1.0)) {
        throw InstabilityError("terminal gain: I + K is not Schur stable");
    }
    // vec(A^T S A) = (A^T kron A^T) vec(S)
    Eigen::Matrix4d lhs;
    const Mat2 At = A.transpose();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) lhs.block<2, 2>(2 * i, 2 * j) = At(i, j) * At;
    lhs -= Eigen::Matrix4d::Identity();
    const Mat2 C = -(Q + K.transpose() * R * K);
    const Eigen::Vector4d rhs = Eigen::Map<const Eigen::Vector4d>(C.data());
    Eigen::Vector4d vecS = lhs.fullPivLu().solve(rhs);
    Mat2 S = Eigen::Map<Mat2>(vecS.data());
    S = 0.5 * (S + S.transpose()).eval();
    // One step of iterative refinement keeps the residual at round-off level.
    const Mat2 resid = A.transpose() * S * A - S - C;
    const Eigen::Vector4d r = Eigen::Map<const Eigen::Vector4d>(resid.data());
    vecS = lhs.fullPivLu().solve(-r);
    S += Eigen::Map<Mat2>(vecS.data());
    return 0.5 * (S + S.transpose());
}

/// Stabilizing solution of the Riccati equation for x+ = x + u, and its gain
/// K = -(S + R)^{-1} S. For scalar weights this is the gain that minimizes S.
struct RiccatiSolution {
    Mat2 S;
    Mat2 K;
};

inline RiccatiSolution solve_riccati(const Mat2& Q, const Mat2& R, int max_iter = 10000, double tol = 1e-13) {
    Mat2 S = Q;
    for (int it = 0; it < max_iter; ++it) {
        const Mat2 next = Q + S - S * (S + R).inverse() * S;
        const double change = (next - S).cwiseAbs().maxCoeff();
        S = 0.5 * (next + next.transpose());
        if (change <= tol * std::max(1.0, S.cwiseAbs().maxCoeff())) break;
    }
    return {S, -(S + R).inverse() * S};
}

inline Mat2 gain_from_terminal_weight(const Mat2& S, const Mat2& R) { return -(S + R).inverse() * S; }

struct TerminalCheck {
    std::string name;
    bool passed = false;
    double value = 0.0;  // quantity tested, for the report
};

struct TerminalIngredients {
    Mat2 K = Mat2::Zero();
    Mat2 S = Mat2::Zero();
    double radius = 0.0;           // terminal ball radius, m
    double uncapped_radius = 0.0;  // before the state-margin cap
    double delta_bound = 0.0;      // g, bound on the mean shift
    double input_half_width = 0.0;
    std::vector<TerminalCheck> checks;

    bool all_passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return !checks.empty();
    }
};

/// Largest terminal ball B(r) with
///   (I+K) B(r) within B(r),  K B(r) + B(g) within the input box,  B(r) + O within X.
/// `input_half_width` is the half-width of the continuous input box.
inline TerminalIngredients validate_terminal_ingredients(const Mat2& K, const Mat2& Q, const Mat2& R, const Mat2& S,
                                                         const Box2& state_box, double input_half_width,
                                                         const Box2& mean_box, double delta_bound) {
    const Mat2 A = Mat2::Identity() + K;
    const double rho = spectral_radius(A);
    if (!(rho < 1.0)) throw InstabilityError("terminal gain: I + K is not Schur stable");

    TerminalIngredients out;
    out.K = K;
    out.S = S;
    out.delta_bound = delta_bound;
    out.input_half_width = input_half_width;

    out.checks.push_back({"schur_stable", true, rho});

    const double resid = lyapunov_residual(K, Q, R, S);
    out.checks.push_back({"lyapunov_residual", resid <= 1e-10, resid});

    const Eigen::SelfAdjointEigenSolver<Mat2> sq(Q), sr(R), ss(S - Q);
    const bool weights_ok = sq.eigenvalues().minCoeff() > 0.0 && sr.eigenvalues().minCoeff() > 0.0 &&
                            ss.eigenvalues().minCoeff() >= -1e-9;
    out.checks.push_back({"weights_Q_pos_R_pos_S_ge_Q", weights_ok, ss.eigenvalues().minCoeff()});

    // Ball invariance under I + K needs the induced 2-norm, not just the eigenvalues.
    const double a_norm = Eigen::JacobiSVD<Mat2>(A).singularValues()(0);
    out.checks.push_back({"ball_invariant", a_norm <= 1.0 + 1e-12, a_norm});

    // max over |e| <= r of |(K e)_i| is r * |row_i(K)|.
    const double k_row = std::max(K.row(0).norm(), K.row(1).norm());
    const double input_slack = input_half_width - delta_bound;
    out.uncapped_radius = k_row > 0.0 ? input_slack / k_row : (input_slack >= 0.0 ? INFINITY : -1.0);

    const double margin = std::min({mean_box.lo.x() - state_box.lo.x(), mean_box.lo.y() - state_box.lo.y(),
                                    state_box.hi.x() - mean_box.hi.x(), state_box.hi.y() - mean_box.hi.y()});
    out.radius = std::min(out.uncapped_radius, margin);

    if (!(out.radius > 0.0)) {
        throw NoFeasibleRadiusError("terminal set: constraints leave no positive radius (input slack " +
                                    std::to_string(input_slack) + ", state margin " + std::to_string(margin) + ")");
    }
    out.checks.push_back({"input_containment", k_row * out.radius + delta_bound <= input_half_width + 1e-12,
                          k_row * out.radius + delta_bound});
    out.checks.push_back({"state_containment", out.radius <= margin + 1e-12, margin});
    return out;
}

}  // namespace msdcee
