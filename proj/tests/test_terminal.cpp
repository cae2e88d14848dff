#include "msdcee/terminal.hpp"

#include "msdcee/random.hpp"

#include <gtest/gtest.h>

using namespace msdcee;

namespace {
const Mat2 I = Mat2::Identity();
const Box2 kDomain{Vec2(0, 0), Vec2(50, 50)};
const Box2 kMeanBox{Vec2(2.5, 2.5), Vec2(47.5, 47.5)};
}  // namespace

TEST(Terminal, DeadbeatGainGivesQPlusR) {
    const Mat2 Q = (Mat2() << 3, 1, 1, 2).finished();
    const Mat2 R = (Mat2() << 5, 0, 0, 7).finished();
    const Mat2 S = solve_terminal_weight(-I, Q, R);
    EXPECT_LE((S - (Q + R)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Terminal, HalfGainScalarCase) {
    // s = q + k^2 r + (1+k)^2 s  with k = -1/2, q = r = 1: s = 5/3
    const Mat2 S = solve_terminal_weight(-0.5 * I, I, I);
    EXPECT_LE((S - (5.0 / 3.0) * I).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Terminal, GoldenRatioGain) {
    const Mat2 S = solve_terminal_weight(-0.618 * I, 100 * I, 100 * I);
    EXPECT_NEAR(S(0, 0), 161.8, 0.005 * 161.8);
    EXPECT_NEAR(S(1, 1), 161.8, 0.005 * 161.8);
    EXPECT_NEAR(S(0, 1), 0.0, 1e-12);
    EXPECT_LE(lyapunov_residual(-0.618 * I, 100 * I, 100 * I, S), 1e-10);
}

TEST(Terminal, ResidualSmallForRandomStableGains) {
    RandomStream rng(5);
    for (int i = 0; i < 200; ++i) {
        Mat2 K;
        K << rng.uniform(-1.4, -0.6), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-1.4, -0.6);
        if (spectral_radius(I + K) >= 0.95) continue;
        const Mat2 Q = rng.uniform(1, 100) * I;
        const Mat2 R = rng.uniform(1, 100) * I;
        const Mat2 S = solve_terminal_weight(K, Q, R);
        EXPECT_LE(lyapunov_residual(K, Q, R, S), 1e-10 * std::max(1.0, S.norm()));
        EXPECT_LE((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Terminal, UnstableGainThrows) {
    EXPECT_THROW(solve_terminal_weight(0.5 * I, I, I), InstabilityError);
    EXPECT_THROW(solve_terminal_weight(-2.0 * I, I, I), InstabilityError);
}

TEST(Terminal, RiccatiWithEqualWeightsIsGolden) {
    const RiccatiSolution sol = solve_riccati(100 * I, 100 * I);
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    EXPECT_NEAR(sol.S(0, 0), 100 * phi, 1e-9);
    EXPECT_NEAR(sol.K(0, 0), -phi / (phi + 1.0), 1e-12);
    EXPECT_LE((gain_from_terminal_weight(sol.S, 100 * I) - sol.K).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Terminal, RadiusFromInputSlack) {
    const Mat2 K = -0.618 * I;
    const Mat2 S = solve_terminal_weight(K, 100 * I, 100 * I);
    const TerminalIngredients t = validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, kMeanBox, 0.5);
    EXPECT_NEAR(t.uncapped_radius, 1.5 / 0.618, 1e-12);
    EXPECT_NEAR(t.radius, 2.427, 1e-3);
    EXPECT_TRUE(t.all_passed());
}

TEST(Terminal, StateMarginCapsRadius) {
    const Mat2 K = -0.618 * I;
    const Mat2 S = solve_terminal_weight(K, 100 * I, 100 * I);
    const Box2 tight{Vec2(1, 1), Vec2(49, 49)};
    const TerminalIngredients t = validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, tight, 0.5);
    EXPECT_DOUBLE_EQ(t.radius, 1.0);
    EXPECT_TRUE(t.all_passed());
}

TEST(Terminal, ShiftBoundAtInputLimitHasNoRadius) {
    const Mat2 K = -0.618 * I;
    const Mat2 S = solve_terminal_weight(K, 100 * I, 100 * I);
    EXPECT_THROW(validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, kMeanBox, 2.0),
                 NoFeasibleRadiusError);
    EXPECT_THROW(validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, kMeanBox, 3.0),
                 NoFeasibleRadiusError);
}

TEST(Terminal, UnstableGainRejectedByValidation) {
    EXPECT_THROW(validate_terminal_ingredients(0.5 * I, I, I, I, kDomain, 2.0, kMeanBox, 0.5), InstabilityError);
}

TEST(Terminal, WrongTerminalWeightFailsResidualCheck) {
    const Mat2 K = -0.618 * I;
    const TerminalIngredients t =
        validate_terminal_ingredients(K, 100 * I, 100 * I, 150 * I, kDomain, 2.0, kMeanBox, 0.5);
    EXPECT_FALSE(t.all_passed());
}

TEST(Terminal, BallIsInvariantAndInputsAdmissible) {
    const Mat2 K = -0.618 * I;
    const Mat2 S = solve_terminal_weight(K, 100 * I, 100 * I);
    const TerminalIngredients t = validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, kMeanBox, 0.5);
    RandomStream rng(9);
    for (int i = 0; i < 1000; ++i) {
        const double ang = rng.uniform(0, 2 * std::numbers::pi);
        const double rad = t.radius * std::sqrt(rng.uniform01());
        const Vec2 e(rad * std::cos(ang), rad * std::sin(ang));
        const Vec2 g = 0.5 * rng.uniform01() * Vec2(std::cos(ang * 3), std::sin(ang * 3));
        EXPECT_LE(((I + K) * e).norm(), t.radius + 1e-12);
        EXPECT_LE((K * e + g).cwiseAbs().maxCoeff(), 2.0 + 1e-12);
        // the terminal cost decreases by at least the stage cost
        const double drop = e.dot(S * e) - ((I + K) * e).dot(S * (I + K) * e);
        EXPECT_GE(drop + 1e-9, e.dot(100 * e) + (K * e).dot(100 * K * e));
    }
}
