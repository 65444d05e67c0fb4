#include <gtest/gtest.h>

#include "gsloc/smoother.hpp"
#include "oracles.hpp"

using namespace gsloc;

namespace {

SmoothingOperator random_operator(std::size_t n, std::mt19937_64& rng) {
    return normalize(oracle::random_graph(n, 0.08, 0.1, rng), GraphParams{});
}

}  // namespace

TEST(Smooth, ZeroStepsIsBitwiseIdentity) {
    std::mt19937_64 rng(1);
    const auto op = random_operator(50, rng);
    const auto s = oracle::random_matrix<float>(50, 7, rng);
    EXPECT_EQ(smooth(op, s, SmoothConfig{0}), s);
}

TEST(Smooth, TwoVertexAverage) {
    GraphParams p;
    p.include_self_edges = true;
    const auto op = normalize(WeightedGraph::from_upper(2, {{0, 1, 1.0}}), p);
    const Eigen::MatrixXd a = oracle::to_dense(op);
    EXPECT_EQ(a, Eigen::Matrix2d::Constant(0.5));
    const auto out = smooth(op, DescriptorMatrixD(2, 1, {0.0, 2.0}), SmoothConfig{1});
    EXPECT_EQ(out(0, 0), 1.0);
    EXPECT_EQ(out(1, 0), 1.0);
    EXPECT_EQ(smooth_dense_oracle(op, DescriptorMatrixD(2, 1, {0.0, 2.0}), SmoothConfig{1}), out);
}

TEST(Smooth, MatchesIndependentDensePower) {
    std::mt19937_64 rng(2);
    const auto w = oracle::random_graph(70, 0.1, 0.1, rng);
    const auto op = normalize(w, GraphParams{});
    const Eigen::MatrixXd a = oracle::dense_normalize(oracle::dense_weights(70, w.upper()), false);
    const auto s = oracle::random_matrix<double>(70, 130, rng);
    Eigen::MatrixXd ref = oracle::to_eigen(s);
    for (unsigned m = 1; m <= 4; ++m) {
        ref = a * ref;
        const Eigen::MatrixXd got = oracle::to_eigen(smooth(op, s, SmoothConfig{m}));
        EXPECT_LT((got - ref).norm() / ref.norm(), 1e-12) << m;
    }
}

TEST(Smooth, FloatStorageRoundsOnce) {
    std::mt19937_64 rng(3);
    const auto op = random_operator(40, rng);
    const auto s = oracle::random_matrix<float>(40, 9, rng);
    const auto hi = smooth(op, s.cast<double>(), SmoothConfig{3});
    const auto lo = smooth(op, s, SmoothConfig{3});
    for (std::size_t i = 0; i < 40; ++i) {
        for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(lo(i, j), static_cast<float>(hi(i, j)));
    }
}

TEST(Smooth, Linear) {
    std::mt19937_64 rng(4);
    const auto op = random_operator(60, rng);
    const auto x = oracle::random_matrix<double>(60, 5, rng);
    const auto y = oracle::random_matrix<double>(60, 5, rng);
    DescriptorMatrixD combo(60, 5);
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t j = 0; j < 5; ++j) combo(i, j) = 2.0 * x(i, j) - 3.0 * y(i, j);
    }
    const auto sx = smooth(op, x, SmoothConfig{2});
    const auto sy = smooth(op, y, SmoothConfig{2});
    const auto sc = smooth(op, combo, SmoothConfig{2});
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(sc(i, j), 2.0 * sx(i, j) - 3.0 * sy(i, j), 1e-12);
    }
}

TEST(Smooth, Composes) {
    std::mt19937_64 rng(5);
    const auto op = random_operator(60, rng);
    const auto x = oracle::random_matrix<double>(60, 3, rng);
    const auto a = smooth(op, smooth(op, x, SmoothConfig{2}), SmoothConfig{3});
    const auto b = smooth(op, x, SmoothConfig{5});
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a(i, j), b(i, j), 1e-12);
    }
}

TEST(Smooth, ConstantsAndRange) {
    std::mt19937_64 rng(6);
    const auto op = random_operator(80, rng);
    DescriptorMatrixD c(80, 2);
    for (std::size_t i = 0; i < 80; ++i) {
        c(i, 0) = 0.7;
        c(i, 1) = -3.25;
    }
    const auto sc = smooth(op, c, SmoothConfig{6});
    for (std::size_t i = 0; i < 80; ++i) {
        EXPECT_NEAR(sc(i, 0), 0.7, 1e-12);
        EXPECT_NEAR(sc(i, 1), -3.25, 1e-12);
    }
    const auto x = oracle::random_matrix<double>(80, 4, rng);
    const auto sx = smooth(op, x, SmoothConfig{3});
    for (std::size_t j = 0; j < 4; ++j) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t i = 0; i < 80; ++i) {
            lo = std::min(lo, x(i, j));
            hi = std::max(hi, x(i, j));
        }
        for (std::size_t i = 0; i < 80; ++i) {
            EXPECT_GE(sx(i, j), lo - 1e-12);
            EXPECT_LE(sx(i, j), hi + 1e-12);
        }
    }
}

TEST(Smooth, ConvergesToDegreeWeightedMeanOnConnectedGraph) {
    // non-bipartite: a triangle plus pendant
    const auto w = WeightedGraph::from_upper(4, {{0, 1, 1.0}, {1, 2, 2.0}, {0, 2, 1.0}, {2, 3, 1.0}});
    const auto op = normalize(w, GraphParams{});
    const DescriptorMatrixD x(4, 1, {1.0, 0.0, 0.0, 5.0});
    const auto out = smooth(op, x, SmoothConfig{400});
    // stationary distribution of D^-1 W is proportional to degree
    const double deg[] = {2.0, 3.0, 4.0, 1.0};
    const double mean = (deg[0] * 1.0 + deg[3] * 5.0) / 10.0;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out(i, 0), mean, 1e-9);
}

TEST(Smooth, IdentityOperatorAndSizeMismatch) {
    std::mt19937_64 rng(7);
    const auto x = oracle::random_matrix<double>(10, 3, rng);
    for (unsigned m : {1u, 2u, 7u}) {
        EXPECT_EQ(smooth(SmoothingOperator::identity(10), x, SmoothConfig{m}), x);
        EXPECT_EQ(smooth_dense_oracle(SmoothingOperator::identity(10), x, SmoothConfig{m}), x);
    }
    EXPECT_THROW(smooth(SmoothingOperator::identity(9), x, SmoothConfig{1}), Error);
}

TEST(Smooth, IsolatedRowsUnchanged) {
    std::mt19937_64 rng(8);
    const auto op = normalize(oracle::random_graph(50, 0.1, 0.3, rng), GraphParams{});
    ASSERT_FALSE(op.isolated_vertices.empty());
    const auto x = oracle::random_matrix<double>(50, 2, rng);
    const auto out = smooth(op, x, SmoothConfig{4});
    for (auto v : op.isolated_vertices) {
        EXPECT_EQ(out(v, 0), x(v, 0));
        EXPECT_EQ(out(v, 1), x(v, 1));
    }
}
