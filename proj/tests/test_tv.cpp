#include <random>

#include <gtest/gtest.h>

#include "elastopnp/tv.hpp"
#include "oracles.hpp"

using namespace elastopnp;

namespace {

Grid random_grid(Index r, Index c, std::mt19937_64 &rng) {
    return to_grid(oracle::random_vector(r * c, rng), r, c);
}

double prox_objective(const Grid &x, const Grid &v, double w) {
    return 0.5 * (x - v).squaredNorm() + w * total_variation(x);
}

} // namespace

TEST(TvOperators, DivergenceIsNegativeAdjointOfGradient) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 5; ++t) {
        const Grid x = random_grid(7, 11, rng);
        const Grid px = random_grid(7, 11, rng), py = random_grid(7, 11, rng);
        Grid gx, gy;
        detail::forward_gradient(x, gx, gy);
        const double lhs = (gx.array() * px.array()).sum() + (gy.array() * py.array()).sum();
        const double rhs = -(x.array() * detail::divergence(px, py).array()).sum();
        EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs) + 1e-12);
    }
}

TEST(TotalVariation, KnownValues) {
    Grid step = Grid::Zero(4, 6);
    step.rightCols(3).setConstant(2.0);
    EXPECT_DOUBLE_EQ(total_variation(step), 8.0);
    EXPECT_EQ(total_variation(Grid::Constant(5, 5, 3.0)), 0.0);
}

TEST(TvProx, ZeroWeightIsIdentity) {
    std::mt19937_64 rng(2);
    const Grid v = random_grid(9, 9, rng);
    EXPECT_EQ((tv_prox(v, 0.0, 50) - v).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TvProx, ConstantImageUnchanged) {
    const Grid v = Grid::Constant(12, 10, 0.37);
    EXPECT_LE((tv_prox(v, 5.0, 100) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TvProx, LargeWeightGivesMean) {
    std::mt19937_64 rng(3);
    const Grid v = random_grid(8, 8, rng);
    const Grid x = tv_prox(v, 1e3, 5000);
    EXPECT_LE((x.array() - v.mean()).abs().maxCoeff(), 1e-3);
}

TEST(TvProx, LowersProxObjectiveAndPreservesMean) {
    std::mt19937_64 rng(4);
    for (double w : {0.01, 0.1, 1.0}) {
        const Grid v = random_grid(16, 16, rng);
        const Grid x = tv_prox(v, w, 200);
        EXPECT_LT(prox_objective(x, v, w), prox_objective(v, v, w));
        EXPECT_NEAR(x.mean(), v.mean(), 1e-12);
        // Near-optimal: random perturbations do not help.
        for (int k = 0; k < 10; ++k) {
            const Grid y = x + 1e-3 * random_grid(16, 16, rng);
            EXPECT_LE(prox_objective(x, v, w), prox_objective(y, v, w) + 1e-6);
        }
    }
}

TEST(TvProx, WarmDualMatchesColdAfterConvergence) {
    std::mt19937_64 rng(5);
    const Grid v = random_grid(10, 10, rng);
    TvDual dual;
    tv_prox(v, 0.3, 500, &dual);
    const Grid warm = tv_prox(v, 0.3, 500, &dual);
    const Grid cold = tv_prox(v, 0.3, 1000);
    EXPECT_LE((warm - cold).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(TvProx, RejectsBadArguments) {
    const Grid v = Grid::Ones(3, 3);
    EXPECT_THROW(tv_prox(v, -1.0, 10), InvalidArgument);
    EXPECT_EQ((tv_prox(v, 1.0, 0) - v).norm(), 0.0);
}
