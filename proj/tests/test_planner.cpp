#include "msdcee/planner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace msdcee;

namespace {

const Box2 kDomain{Vec2(0, 0), Vec2(50, 50)};
const Mat2 I = Mat2::Identity();

ParticleSet make_set(const std::vector<Vec2>& xy, std::vector<double> w = {}) {
    ParticleSet ps;
    for (const Vec2& p : xy) ps.particles.push_back(SourceTerm{Vec3(p.x(), p.y(), 0.0), 5.0});
    if (w.empty()) w.assign(xy.size(), 1.0 / static_cast<double>(xy.size()));
    ps.weights = std::move(w);
    return ps;
}

PlanningProblem make_problem(const ParticleSet& ps, const Vec2& x_t) {
    PlanningProblem p;
    p.x_t = x_t;
    p.particles = &ps;
    p.anchor = summarize(ps);
    p.state_box = kDomain;
    return p;
}

ActionSequence random_sequence(RandomStream& rng, const ActionSet& actions, int n) {
    std::vector<int> idx;
    for (int k = 0; k < n; ++k) idx.push_back(static_cast<int>(rng.index(actions.size())));
    return ActionSequence::from_indices(actions, idx);
}

ParticleSet cloud_near(RandomStream& rng, std::size_t n, const Vec2& c, double spread) {
    std::vector<Vec2> xy;
    for (std::size_t i = 0; i < n; ++i) xy.emplace_back(c.x() + rng.uniform(-spread, spread), c.y() + rng.uniform(-spread, spread));
    return make_set(xy);
}

}  // namespace

TEST(Actions, CompassOrderAndLengths) {
    const ActionSet a(2.0);
    EXPECT_EQ(a[0], Vec2(0, 2));
    EXPECT_EQ(a[1], Vec2(0, -2));
    EXPECT_EQ(a[2], Vec2(-2, 0));
    EXPECT_EQ(a[3], Vec2(2, 0));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].norm(), 2.0, 1e-15);
    EXPECT_NEAR(a[5].x(), std::sqrt(2.0), 1e-15);
    const ActionSet b(2.0, DiagonalMode::per_axis);
    EXPECT_EQ(b[5], Vec2(2, 2));
    EXPECT_THROW(ActionSet(0.0), ConfigError);
}

TEST(Candidates, ExhaustiveCountsInInterior) {
    RandomStream rng(1);
    SearchConfig cfg;
    cfg.strategy = SearchStrategy::exhaustive;
    EXPECT_EQ(generate_candidates(Vec2(25, 25), ActionSet{}, 1, cfg, kDomain, rng).size(), 8u);
    EXPECT_EQ(generate_candidates(Vec2(25, 25), ActionSet{}, 2, cfg, kDomain, rng).size(), 64u);
    EXPECT_EQ(generate_candidates(Vec2(25, 25), ActionSet{}, 3, cfg, kDomain, rng).size(), 512u);
}

TEST(Candidates, CornerLeavesThreeMoves) {
    RandomStream rng(1);
    SearchConfig cfg;
    cfg.strategy = SearchStrategy::exhaustive;
    const auto c = generate_candidates(Vec2(0, 0), ActionSet{}, 1, cfg, kDomain, rng);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[0].indices, std::vector<int>{0});
    EXPECT_EQ(c[1].indices, std::vector<int>{3});
    EXPECT_EQ(c[2].indices, std::vector<int>{5});
}

TEST(Candidates, ExhaustiveLimitEnforced) {
    RandomStream rng(1);
    SearchConfig cfg;
    cfg.strategy = SearchStrategy::exhaustive;
    EXPECT_THROW(generate_candidates(Vec2(25, 25), ActionSet{}, 6, cfg, kDomain, rng), ConfigError);
    EXPECT_THROW(generate_candidates(Vec2(25, 25), ActionSet{}, 0, cfg, kDomain, rng), ConfigError);
}

TEST(Candidates, SampledAreAdmissibleSortedAndIncludeStraightLines) {
    RandomStream rng(2);
    SearchConfig cfg;
    cfg.strategy = SearchStrategy::sampled;
    cfg.random_candidates = 300;
    const Vec2 x0(5, 5);
    const auto c = generate_candidates(x0, ActionSet{}, 10, cfg, kDomain, rng);
    ASSERT_FALSE(c.empty());
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (const Vec2& s : c[i].states(x0)) EXPECT_TRUE(kDomain.contains(s));
        if (i > 0) EXPECT_LT(c[i - 1].indices, c[i].indices);
    }
    // up, right and up-right stay inside for 10 steps of 2 m from (5,5)
    for (int a : {0, 3, 5}) {
        const std::vector<int> line(10, a);
        EXPECT_TRUE(std::any_of(c.begin(), c.end(), [&](const ActionSequence& s) { return s.indices == line; }));
    }
}

TEST(SmpcCost, HandComputedValue) {
    // Q = 2I, R = I, S = 3I, N = 1, x = mean = 0, u = (2, 0), P = I:
    // |u|_R^2 = 4, |x1|_S^2 = 12, N tr(QP) = 4, tr(SP) = 6
    Weights w;
    w.Q = 2 * I;
    w.R = I;
    w.S = 3 * I;
    ActionSequence seq;
    seq.moves = {Vec2(2, 0)};
    const CostBreakdown c = smpc_cost(Vec2::Zero(), Vec2::Zero(), I, seq, w);
    EXPECT_DOUBLE_EQ(c.tracking, 16.0);
    EXPECT_DOUBLE_EQ(c.uncertainty, 10.0);
    EXPECT_DOUBLE_EQ(c.total, 26.0);
}

TEST(SmpcCost, OneStepTowardTheMean) {
    // x = 0, mean = (4, 0), u = (2, 0), unit weights, P = 0: 16 + 4 + 4
    Weights w;
    w.Q = w.R = w.S = I;
    ActionSequence seq;
    seq.moves = {Vec2(2, 0)};
    EXPECT_DOUBLE_EQ(smpc_cost(Vec2::Zero(), Vec2(4, 0), Mat2::Zero(), seq, w).total, 24.0);
}

TEST(SmpcCost, ZeroAtRestOnTheMean) {
    ActionSequence seq;
    seq.moves = {Vec2::Zero(), Vec2::Zero()};
    EXPECT_EQ(smpc_cost(Vec2(3, 4), Vec2(3, 4), Mat2::Zero(), seq, Weights{}).total, 0.0);
}

TEST(SmpcCost, DifferencesDoNotDependOnCovariance) {
    RandomStream rng(3);
    const ActionSet actions;
    for (int i = 0; i < 100; ++i) {
        const auto a = random_sequence(rng, actions, 5);
        const auto b = random_sequence(rng, actions, 5);
        const Vec2 x(rng.uniform(0, 50), rng.uniform(0, 50)), m(rng.uniform(0, 50), rng.uniform(0, 50));
        const Mat2 P1 = Mat2::Zero();
        Mat2 P2;
        P2 << rng.uniform(1, 30), 2, 2, rng.uniform(1, 30);
        const double d1 = smpc_cost(x, m, P1, a, Weights{}).total - smpc_cost(x, m, P1, b, Weights{}).total;
        const double d2 = smpc_cost(x, m, P2, a, Weights{}).total - smpc_cost(x, m, P2, b, Weights{}).total;
        EXPECT_NEAR(d1, d2, 1e-9 * std::max(1.0, std::abs(d1)));
    }
}

TEST(DualCost, DecompositionIdentity) {
    RandomStream rng(4);
    const ParticleSet ps = cloud_near(rng, 300, Vec2(25, 12), 8);
    const PlanningProblem problem = make_problem(ps, Vec2(22, 6));
    RolloutConfig cfg;
    cfg.scenarios = 4;
    RolloutContext ctx(problem, cfg, rng);
    const ActionSet actions;
    for (int i = 0; i < 200; ++i) {
        const DualCost c = ctx.dual_cost(random_sequence(rng, actions, 3), Weights{}, nullptr);
        ASSERT_FALSE(c.diverged);
        EXPECT_NEAR(c.total, c.tracking + c.uncertainty, 1e-9);
    }
}

TEST(DualCost, CollapsesToSmpcWhenReadingsCarryNoInformation) {
    RandomStream rng(5);
    const ParticleSet ps = cloud_near(rng, 200, Vec2(25, 12), 8);
    PlanningProblem problem = make_problem(ps, Vec2(20, 8));
    problem.sensor.noise_floor = 1e12;
    RolloutConfig cfg;
    cfg.scenarios = 3;
    const ActionSet actions;
    for (int i = 0; i < 50; ++i) {
        const ActionSequence seq = random_sequence(rng, actions, 4);
        const DualCost d = dcee_cost(problem, seq, Weights{}, cfg, rng);
        const CostBreakdown s = smpc_cost(problem.x_t, problem.anchor, seq, Weights{});
        EXPECT_NEAR(d.total, s.total, 1e-9 * std::max(1.0, std::abs(s.total)));
        EXPECT_NEAR(d.tracking, s.tracking, 1e-9 * std::max(1.0, std::abs(s.tracking)));
    }
}

TEST(DualCost, DeterministicForFixedSeed) {
    RandomStream rng(6);
    const ParticleSet ps = cloud_near(rng, 200, Vec2(25, 12), 8);
    const PlanningProblem problem = make_problem(ps, Vec2(20, 8));
    RolloutConfig cfg;
    cfg.scenarios = 1;
    const ActionSequence seq = random_sequence(rng, ActionSet{}, 4);
    RandomStream a(99), b(99);
    EXPECT_EQ(dcee_cost(problem, seq, Weights{}, cfg, a).total, dcee_cost(problem, seq, Weights{}, cfg, b).total);
}

TEST(DualCost, EvaluationOrderDoesNotChangeCosts) {
    RandomStream rng(7);
    const ParticleSet ps = cloud_near(rng, 200, Vec2(25, 12), 8);
    const PlanningProblem problem = make_problem(ps, Vec2(20, 8));
    RolloutConfig cfg;
    cfg.scenarios = 4;
    const ActionSequence s1 = random_sequence(rng, ActionSet{}, 3);
    const ActionSequence s2 = random_sequence(rng, ActionSet{}, 3);
    RandomStream a(5), b(5);
    RolloutContext c1(problem, cfg, a), c2(problem, cfg, b);
    const double x1 = c1.dual_cost(s1, Weights{}, nullptr).total;
    const double y1 = c1.dual_cost(s2, Weights{}, nullptr).total;
    const double y2 = c2.dual_cost(s2, Weights{}, nullptr).total;
    const double x2 = c2.dual_cost(s1, Weights{}, nullptr).total;
    EXPECT_EQ(x1, x2);
    EXPECT_EQ(y1, y2);
}

TEST(DualCost, FourParticleTwoScenarioOracle) {
    const std::vector<Vec2> xy{Vec2(24, 10), Vec2(26, 10), Vec2(25, 12), Vec2(25, 8)};
    const std::vector<double> w0{0.1, 0.2, 0.3, 0.4};
    const ParticleSet ps = make_set(xy, w0);
    const PlanningProblem problem = make_problem(ps, Vec2(25, 4));
    RolloutConfig cfg;
    const ActionSet actions;
    const ActionSequence seq = ActionSequence::from_indices(actions, {0, 5});  // up, up-right
    const std::vector<Vec2> xs = seq.states(problem.x_t);
    const EnvironmentParams env;
    const SensorModel sensor;
    std::vector<std::vector<double>> readings(2);
    for (int k = 1; k <= 2; ++k) {
        const Vec3 a(xs[k].x(), xs[k].y(), 1.0);
        readings[0].push_back(concentration(a, ps.particles[1], env) * 1.03);
        readings[1].push_back(concentration(a, ps.particles[3], env) * 0.95);
    }
    cfg.explicit_readings = readings;
    RandomStream rng(1);
    Weights wts;
    const DualCost got = dcee_cost(problem, seq, wts, cfg, rng);

    // Independent recomputation with explicit Bayes and moments.
    double sum = 0.0;
    for (int s = 0; s < 2; ++s) {
        std::vector<double> w = w0;
        Vec2 mean(0, 0);
        for (int i = 0; i < 4; ++i) mean += w[i] * xy[i];
        Mat2 cov = Mat2::Zero();
        for (int i = 0; i < 4; ++i) cov += w[i] * (xy[i] - mean) * (xy[i] - mean).transpose();
        double j = 0.0;
        for (int k = 0; k < 2; ++k) {
            j += (xs[k] - mean).dot(wts.Q * (xs[k] - mean)) + seq.moves[k].dot(wts.R * seq.moves[k]) +
                 (wts.Q * cov).trace();
            const Vec3 a(xs[k + 1].x(), xs[k + 1].y(), 1.0);
            double tot = 0.0;
            for (int i = 0; i < 4; ++i) {
                const double m = concentration(a, ps.particles[i], env);
                const double sg = std::max(0.1 * m, 1e-4);
                const double z = readings[s][k];
                w[i] *= std::exp(-0.5 * (z - m) * (z - m) / (sg * sg)) / sg;
                tot += w[i];
            }
            for (double& v : w) v /= tot;
            mean.setZero();
            for (int i = 0; i < 4; ++i) mean += w[i] * xy[i];
            cov.setZero();
            for (int i = 0; i < 4; ++i) cov += w[i] * (xy[i] - mean) * (xy[i] - mean).transpose();
        }
        j += (xs[2] - mean).dot(wts.S * (xs[2] - mean)) + (wts.S * cov).trace();
        sum += j;
    }
    EXPECT_NEAR(got.total, sum / 2.0, 1e-9 * sum);
}

TEST(Optimize, SmpcOneStepMatchesBruteForce) {
    RandomStream rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const ParticleSet ps = cloud_near(rng, 50, Vec2(rng.uniform(5, 45), rng.uniform(5, 45)), 4);
        const PlanningProblem problem = make_problem(ps, Vec2(rng.uniform(1, 49), rng.uniform(1, 49)));
        PlannerSetup setup;
        setup.kind = PlannerKind::smpc;
        setup.weights.horizon = 1;
        const PlanResult r = optimize(problem, setup, rng);
        double best = INFINITY;
        int arg = -1;
        for (int a = 0; a < 8; ++a) {
            const auto seq = ActionSequence::from_indices(setup.actions, {a});
            if (!kDomain.contains(problem.x_t + setup.actions[a])) continue;
            const double c = smpc_cost(problem.x_t, problem.anchor, seq, setup.weights).total;
            if (c < best) {
                best = c;
                arg = a;
            }
        }
        ASSERT_EQ(r.sequence.indices.size(), 1u);
        EXPECT_EQ(r.sequence.indices[0], arg);
        EXPECT_DOUBLE_EQ(r.cost, best);
    }
}

TEST(Optimize, DualOneStepMatchesBruteForce) {
    RandomStream rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const ParticleSet ps = cloud_near(rng, 80, Vec2(25, 12), 6);
        const PlanningProblem problem = make_problem(ps, Vec2(rng.uniform(15, 35), rng.uniform(2, 8)));
        PlannerSetup setup;
        setup.kind = PlannerKind::ms_dcee;
        setup.weights.horizon = 1;
        setup.rollout.explicit_readings = {{rng.uniform(0, 0.05)}, {rng.uniform(0, 0.05)}};
        setup.keep_diagnostics = true;
        const PlanResult r = optimize(problem, setup, rng);
        double best = INFINITY;
        std::vector<int> arg;
        for (int a = 0; a < 8; ++a) {
            const auto seq = ActionSequence::from_indices(setup.actions, {a});
            RandomStream s(1);
            const DualCost c = dcee_cost(problem, seq, setup.weights, setup.rollout, s);
            if (c.diverged) continue;
            if (c.total < best) {
                best = c.total;
                arg = {a};
            }
        }
        if (arg.empty()) continue;
        EXPECT_EQ(r.sequence.indices, arg);
        EXPECT_NEAR(r.cost, best, 1e-9 * best);
    }
}

TEST(Optimize, ScalingWeightsKeepsTheArgmin) {
    RandomStream rng(10);
    const ParticleSet ps = cloud_near(rng, 200, Vec2(25, 12), 8);
    const PlanningProblem problem = make_problem(ps, Vec2(20, 5));
    PlannerSetup a;
    a.weights.horizon = 2;
    a.search.strategy = SearchStrategy::exhaustive;
    a.rollout.scenarios = 3;
    PlannerSetup b = a;
    b.weights.Q *= 7.5;
    b.weights.R *= 7.5;
    b.weights.S *= 7.5;
    RandomStream s1(3), s2(3);
    const PlanResult ra = optimize(problem, a, s1);
    const PlanResult rb = optimize(problem, b, s2);
    EXPECT_EQ(ra.sequence.indices, rb.sequence.indices);
    EXPECT_NEAR(rb.cost, 7.5 * ra.cost, 1e-9 * rb.cost);
}

TEST(Optimize, SampledPlusExhaustiveMatchesExhaustive) {
    RandomStream rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const ParticleSet ps = cloud_near(rng, 150, Vec2(25, 12), 8);
        const PlanningProblem problem = make_problem(ps, Vec2(rng.uniform(10, 40), rng.uniform(2, 20)));
        PlannerSetup ex;
        ex.weights.horizon = 2;
        ex.search.strategy = SearchStrategy::exhaustive;
        ex.rollout.scenarios = 2;
        PlannerSetup both = ex;
        both.search.strategy = SearchStrategy::both;
        const std::uint64_t seed = 100 + trial;
        RandomStream s1(seed), s2(seed);
        const PlanResult a = optimize(problem, ex, s1);
        const PlanResult b = optimize(problem, both, s2);
        EXPECT_EQ(a.sequence.indices, b.sequence.indices);
        EXPECT_EQ(a.cost, b.cost);
    }
}

TEST(Optimize, TerminalConstraintRespectedWhenFeasible) {
    RandomStream rng(12);
    const ParticleSet ps = cloud_near(rng, 100, Vec2(25, 10), 1);
    PlanningProblem problem = make_problem(ps, Vec2(24, 9));
    problem.oracle_mean = Vec2(25, 10);
    PlannerSetup setup;
    setup.weights.horizon = 2;
    setup.search.strategy = SearchStrategy::exhaustive;
    setup.rollout.scenarios = 2;
    const Mat2 K = -0.618 * I;
    const Mat2 S = solve_terminal_weight(K, 100 * I, 100 * I);
    setup.terminal = validate_terminal_ingredients(K, 100 * I, 100 * I, S, kDomain, 2.0, kDomain.shrunk(2.5), 0.5);
    const PlanResult r = optimize(problem, setup, rng);
    ASSERT_TRUE(r.feasible);
    EXPECT_TRUE(r.terminal_enforced);
    EXPECT_LE((r.states.back() - Vec2(25, 10)).norm(), setup.terminal->radius + 1e-9);
}

TEST(Optimize, InfeasibleTerminalFallsBackAndFlags) {
    RandomStream rng(13);
    const ParticleSet ps = cloud_near(rng, 100, Vec2(45, 45), 1);
    PlanningProblem problem = make_problem(ps, Vec2(5, 5));
    problem.oracle_mean = Vec2(45, 45);
    PlannerSetup setup;
    setup.weights.horizon = 2;
    setup.search.strategy = SearchStrategy::exhaustive;
    setup.rollout.scenarios = 2;
    const Mat2 K = -0.618 * I;
    setup.terminal = validate_terminal_ingredients(K, 100 * I, 100 * I, solve_terminal_weight(K, 100 * I, 100 * I),
                                                   kDomain, 2.0, kDomain.shrunk(2.5), 0.5);
    const PlanResult r = optimize(problem, setup, rng);
    EXPECT_FALSE(r.feasible);
    EXPECT_EQ(r.feasible_count, 0u);
    EXPECT_EQ(r.sequence.indices, (std::vector<int>{5, 5}));  // straight at the target
}

TEST(Optimize, SingleStepDualUsesHorizonOne) {
    RandomStream rng(14);
    const ParticleSet ps = cloud_near(rng, 100, Vec2(25, 10), 5);
    const PlanningProblem problem = make_problem(ps, Vec2(20, 5));
    PlannerSetup setup;
    setup.kind = PlannerKind::dcee;
    setup.weights.horizon = 10;
    const PlanResult r = optimize(problem, setup, rng);
    EXPECT_EQ(r.sequence.horizon(), 1u);
    EXPECT_FALSE(r.terminal_enforced);
}

TEST(Ipp, FlatLikelihoodTiesKeepFirstCandidate) {
    RandomStream rng(15);
    const ParticleSet ps = cloud_near(rng, 100, Vec2(25, 25), 10);
    PlanningProblem problem = make_problem(ps, Vec2(25, 25));
    problem.sensor.noise_floor = 1e12;
    SearchConfig search;
    search.strategy = SearchStrategy::exhaustive;
    RolloutConfig roll;
    roll.scenarios = 2;
    const PlanResult r = ipp_entropy_plan(problem, 1, search, roll, rng);
    EXPECT_EQ(r.sequence.indices, std::vector<int>{0});
    EXPECT_NEAR(r.information_gain, 0.0, 1e-9);
}

TEST(Ipp, SingleCandidateIsReturned) {
    RandomStream rng(16);
    const ParticleSet ps = cloud_near(rng, 100, Vec2(25, 25), 10);
    PlanningProblem problem = make_problem(ps, Vec2(0, 0));
    problem.state_box = Box2{Vec2(0, 0), Vec2(0, 2)};
    SearchConfig search;
    search.strategy = SearchStrategy::exhaustive;
    const PlanResult r = ipp_entropy_plan(problem, 1, search, RolloutConfig{}, rng);
    EXPECT_EQ(r.evaluated, 1u);
    EXPECT_EQ(r.sequence.indices, std::vector<int>{0});
}

TEST(Ipp, FourParticleExpectedEntropyByEnumeration) {
    const std::vector<Vec2> xy{Vec2(24.5, 10.5), Vec2(26.5, 10.5), Vec2(25.5, 12.5), Vec2(25.5, 8.5)};
    const ParticleSet ps = make_set(xy);
    PlanningProblem problem = make_problem(ps, Vec2(25, 5));
    const EnvironmentParams env;
    RolloutConfig roll;
    // One scenario per hypothesis, noiseless reading at the candidate end point.
    const ActionSet actions;
    const ActionSequence up = ActionSequence::from_indices(actions, {0});
    const Vec3 a(25, 7, 1);
    for (int j = 0; j < 4; ++j) roll.explicit_readings.push_back({concentration(a, ps.particles[j], env)});
    RandomStream rng(1);
    RolloutContext ctx(problem, roll, rng);
    const GridSpec grid{kDomain, 1.0};
    bool diverged = false;
    const double gain = ctx.information_gain(up, grid, diverged);
    ASSERT_FALSE(diverged);

    double mean_h = 0.0;
    for (int j = 0; j < 4; ++j) {
        std::vector<double> w(4);
        double tot = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double m = concentration(a, ps.particles[i], env);
            const double sg = std::max(0.1 * m, 1e-4);
            const double z = roll.explicit_readings[j][0];
            w[i] = 0.25 * std::exp(-0.5 * (z - m) * (z - m) / (sg * sg)) / sg;
            tot += w[i];
        }
        double h = 0.0;
        for (double v : w) {
            const double p = v / tot;
            if (p > 0) h -= p * std::log(p);
        }
        mean_h += h / 4.0;
    }
    EXPECT_NEAR(gain, std::log(4.0) - mean_h, 1e-12);
    EXPECT_GT(gain, 0.0);
}

TEST(DualCost, SparseLikelihoodMatchesExactRollout) {
    RandomStream rng(17);
    const ParticleSet ps = cloud_near(rng, 400, Vec2(25, 20), 15);
    const PlanningProblem problem = make_problem(ps, Vec2(22, 14));
    RolloutConfig sparse;
    sparse.scenarios = 6;
    RolloutConfig exact = sparse;
    exact.likelihood_tolerance = 0.0;
    RandomStream a(4), b(4);
    RolloutContext cs(problem, sparse, a), ce(problem, exact, b);
    for (int i = 0; i < 100; ++i) {
        const ActionSequence seq = random_sequence(rng, ActionSet{}, 6);
        const DualCost x = cs.dual_cost(seq, Weights{}, nullptr);
        const DualCost y = ce.dual_cost(seq, Weights{}, nullptr);
        EXPECT_NEAR(x.total, y.total, 1e-9 * y.total);
    }
}
