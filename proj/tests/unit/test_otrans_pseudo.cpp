#include "oracles.hpp"
#include "testing.hpp"

#include "wsseg/otrans.hpp"
#include "wsseg/pseudo.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace wsseg;

using tk::grid_best;
using tk::objective2;

namespace {

Vector uniform(Index n) { return tk::uniform_marginal(n); }

} // namespace

TEST(Sinkhorn, ConstantScoreGivesProductPlan) {
    const auto p = sinkhorn(Matrix::Constant(4, 3, 0.7), uniform(4), uniform(3), 0.1);
    EXPECT_LE((p.plan.array() - 1.0 / 12.0).abs().maxCoeff(), 1e-12);
    const auto one = sinkhorn(Matrix::Constant(1, 1, 3.0), uniform(1), uniform(1), 0.5);
    EXPECT_NEAR(one.plan(0, 0), 1.0, 1e-15);
}

TEST(Sinkhorn, TwoByTwoGridOracle) {
    Matrix s(2, 2);
    s << 1, 0, 0, 1;
    const auto p = sinkhorn(s, uniform(2), uniform(2), 0.5, {.max_iters = 10000, .tol = 1e-12});
    const double got = objective2(p.plan(0, 0), p.plan(0, 1), p.plan(1, 0), p.plan(1, 1), s, 0.5);
    EXPECT_LE(grid_best(s, uniform(2), uniform(2), 0.5) - got, 1e-4);
    EXPECT_NEAR(entropic_objective(p.plan, s, 0.5), got, 1e-12);
}

TEST(Sinkhorn, PropertyMarginalsMassAndDomainsAgree) {
    tk::Rng rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        const Index n = tk::uniform_int(rng, 1, 40), m = tk::uniform_int(rng, 1, 8);
        const Matrix s = tk::random_matrix(rng, n, m);
        Vector r = (tk::random_matrix(rng, n, 1).array().abs() + 0.1).matrix();
        Vector c = (tk::random_matrix(rng, m, 1).array().abs() + 0.1).matrix();
        r /= r.sum();
        c /= c.sum();
        const auto log_p = sinkhorn(s, r, c, 0.5, {.max_iters = 20000, .tol = 1e-10});
        ASSERT_TRUE(log_p.converged);
        EXPECT_LE(log_p.marginal_residual, 1e-10);
        EXPECT_GE(log_p.plan.minCoeff(), 0.0);
        EXPECT_NEAR(log_p.plan.sum(), 1.0, 1e-9);
        EXPECT_LE((log_p.plan.rowwise().sum() - r).cwiseAbs().maxCoeff(), 1e-10);
        const auto direct = sinkhorn(s, r, c, 0.5, {.max_iters = 20000, .tol = 1e-10, .log_domain = false});
        EXPECT_LE((direct.plan - log_p.plan).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Sinkhorn, NonConvergenceIsFlagged) {
    tk::Rng rng(4);
    const auto p = sinkhorn(tk::random_matrix(rng, 30, 5, 5.0), uniform(30), uniform(5), 0.01, {.max_iters = 1, .tol = 1e-14});
    EXPECT_FALSE(p.converged);
    EXPECT_GT(p.marginal_residual, 1e-14);
}

TEST(OrderPrior, Values) {
    const double peak = 1.0 / (0.7 * std::sqrt(2.0 * std::numbers::pi));
    const Matrix t = order_prior(4, 2, 0.7);
    EXPECT_NEAR(t(1, 0), peak, 1e-15);  // i=2, j=1: 2/4 = 1/2
    EXPECT_NEAR(t(3, 1), peak, 1e-15);
    const Matrix sq = order_prior(5, 5, 1.3);
    EXPECT_EQ(sq, sq.transpose());
    const Matrix two = order_prior(2, 2, 1.0);
    const double d = 0.5 / std::sqrt(0.5);
    EXPECT_NEAR(d, 0.70711, 1e-5);
    EXPECT_NEAR(two(0, 1), std::exp(-d * d / 2.0) / std::sqrt(2.0 * std::numbers::pi), 1e-15);
}

TEST(OrderPreserving, FlatPriorIsPlainSinkhorn) {
    tk::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = tk::uniform_int(rng, 1, 50), m = tk::uniform_int(rng, 1, 6);
        const Matrix v = tk::unit_columns(rng, 4, n), p = tk::unit_columns(rng, 4, m);
        const double rho = tk::uniform(rng, 0.05, 1.0);
        const SinkhornOptions o{.max_iters = 20000, .tol = 1e-12};
        const auto op = solve_order_preserving(v, p, rho, Matrix::Constant(n, m, 0.37), o);
        const auto plain = sinkhorn(v.transpose() * p, uniform(n), uniform(m), rho, o);
        EXPECT_LE((op.plan - plain.plan).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(OrderPreserving, LargeRhoIsPriorProjection) {
    tk::Rng rng(6);
    const Matrix v = tk::unit_columns(rng, 4, 20), p = tk::unit_columns(rng, 4, 3);
    const SinkhornOptions o{.max_iters = 20000, .tol = 1e-12};
    const auto op = solve_order_preserving(v, p, 1e8, 0.5, o);
    const auto prior = sinkhorn_log_kernel(order_prior(20, 3, 0.5).array().log().matrix(), uniform(20), uniform(3), o);
    EXPECT_LE((op.plan - prior.plan).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(OrderPreserving, RecoversOrderedAssignment) {
    Matrix p = Matrix::Zero(3, 2);
    p(0, 0) = 1.0;
    p(1, 1) = 1.0;
    Matrix v(3, 6);
    for (Index t = 0; t < 6; ++t) v.col(t) = p.col(t < 3 ? 0 : 1);
    const auto plan = solve_order_preserving(v, p, 0.1, 1.0, {.max_iters = 20000, .tol = 1e-10});
    for (Index t = 0; t < 6; ++t) {
        Index best = 0;
        plan.plan.row(t).maxCoeff(&best);
        EXPECT_EQ(best, t < 3 ? 0 : 1);
    }
}

TEST(OrderPreserving, PermutationEquivarianceWithFlatPrior) {
    tk::Rng rng(7);
    const Matrix v = tk::unit_columns(rng, 5, 17), p = tk::unit_columns(rng, 5, 4);
    const std::vector<int> perm = {2, 0, 3, 1};
    Matrix pp(5, 4);
    for (int j = 0; j < 4; ++j) pp.col(j) = p.col(perm[static_cast<std::size_t>(j)]);
    const Matrix flat = Matrix::Ones(17, 4);
    const SinkhornOptions o{.max_iters = 20000, .tol = 1e-12};
    const auto a = solve_order_preserving(v, p, 0.2, flat, o);
    const auto b = solve_order_preserving(v, pp, 0.2, flat, o);
    for (int j = 0; j < 4; ++j) EXPECT_LE((b.plan.col(j) - a.plan.col(perm[static_cast<std::size_t>(j)])).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pseudo, CountAndNormalizeExamples) {
    Matrix q(3, 2);
    q << .8, .2, .4, .6, .1, .9;
    EXPECT_EQ(count_assignments(q, 0, 3, 0, 1), (std::pair<Index, Index>{1, 2}));
    EXPECT_EQ(count_assignments(Matrix::Constant(4, 2, 0.3), 0, 4, 0, 1), (std::pair<Index, Index>{4, 0}));
    Matrix big(3, 2);
    big << .9, .1, .8, .2, .7, .3;
    EXPECT_EQ(count_assignments(big, 0, 3, 0, 1), (std::pair<Index, Index>{3, 0}));

    Matrix r(2, 2);
    r << 0.3, 0.1, 0, 0;
    const auto [a, b] = normalize_two_class(r, 0, 0, 1);
    EXPECT_DOUBLE_EQ(a, 0.75);
    EXPECT_DOUBLE_EQ(b, 0.25);
    EXPECT_EQ(normalize_two_class(r, 1, 0, 1), (std::pair<double, double>{0.5, 0.5}));
    EXPECT_EQ(normalize_two_class(Matrix::Constant(1, 2, 0.2), 0, 0, 1), (std::pair<double, double>{0.5, 0.5}));
}

TEST(Pseudo, RegionArithmetic) {
    EXPECT_EQ(hard_region_sizes(4, 2, 2, 0.5), (std::pair<Index, Index>{1, 1}));
    // Interval of 4 interior samples between timestamps at 0 and 5, two each side.
    Matrix q(6, 2);
    q << 1, 0, .9, .1, .6, .4, .4, .6, .1, .9, 0, 1;
    const auto p = generate_pseudo_labels(q, TimestampAnnotations{{{0, 0}, {5, 1}}}, 0.5);
    EXPECT_EQ(p.hard, (std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1}));
    EXPECT_EQ(p.distribution(0, 1), 1.0);
    EXPECT_EQ(p.distribution(1, 4), 1.0);
    EXPECT_DOUBLE_EQ(p.distribution(0, 2), 0.6);
}

TEST(Pseudo, ExtremeScales) {
    Matrix q(10, 3);
    for (Index t = 0; t < 10; ++t) q.row(t) << (t < 4 ? 0.9 : 0.05), 0.0, (t < 4 ? 0.05 : 0.9);
    const TimestampAnnotations ann{{{0, 0}, {9, 2}}};
    const auto full = generate_pseudo_labels(q, ann, 1.0);
    int changes = 0;
    for (Index t = 0; t < 10; ++t) {
        EXPECT_TRUE(full.hard[static_cast<std::size_t>(t)]);
        if (t && full.distribution.col(t) != full.distribution.col(t - 1)) ++changes;
    }
    EXPECT_EQ(changes, 1);
    const auto none = generate_pseudo_labels(q, ann, 0.0);
    for (Index t = 1; t < 9; ++t) EXPECT_FALSE(none.hard[static_cast<std::size_t>(t)]);
}

TEST(Pseudo, PropertyInvariants) {
    tk::Rng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const int C = tk::uniform_int(rng, 2, 5);
        const Index T = tk::uniform_int(rng, 1, 60);
        const auto ann = tk::random_annotations(rng, T, C, tk::uniform_int(rng, 1, 8));
        Matrix q = tk::random_probs(rng, C, T).transpose() / static_cast<double>(T);
        const double e1 = tk::uniform(rng, 0.0, 1.0), e2 = tk::uniform(rng, e1, 1.0);
        const auto p1 = generate_pseudo_labels(q, ann, e1);
        const auto p2 = generate_pseudo_labels(q, ann, e2);
        EXPECT_EQ(tk::pseudo_violation(p1, p2, ann, C), "");
    }
}
