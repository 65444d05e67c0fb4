#include <gtest/gtest.h>

#include <Eigen/SVD>

#include "gsloc/feature_prep.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace gsloc;

TEST(FitProjection, DiagonalCovarianceScales) {
    const double c = std::sqrt(6.0), e = std::sqrt(1.5);
    DescriptorMatrixD x(4, 2, {c, 0.0, -c, 0.0, 0.0, e, 0.0, -e});
    const Eigen::MatrixXd cov = oracle::covariance(oracle::to_eigen(x));
    Eigen::EigenSolver<Eigen::MatrixXd> ref(cov);
    std::vector<double> lambdas{ref.eigenvalues()[0].real(), ref.eigenvalues()[1].real()};
    std::sort(lambdas.rbegin(), lambdas.rend());
    ASSERT_NEAR(lambdas[0], 4.0, 1e-12);
    ASSERT_NEAR(lambdas[1], 1.0, 1e-12);

    const auto p = fit_projection(x, 2);
    EXPECT_NEAR(p.scale[0], 0.5, 1e-8);
    EXPECT_NEAR(p.scale[1], 1.0, 1e-8);
    EXPECT_NEAR(std::abs(p.basis(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(std::abs(p.basis(1, 1)), 1.0, 1e-12);
}

TEST(FitProjection, EigenvaluesMatchSvdOracle) {
    std::mt19937_64 rng(1);
    auto x = oracle::random_matrix<double>(300, 12, rng);
    for (std::size_t i = 0; i < x.rows(); ++i) x(i, 3) = 3.0 * x(i, 3) + x(i, 4);
    const Eigen::MatrixXd xe = oracle::to_eigen(x);
    const Eigen::MatrixXd centered = xe.rowwise() - xe.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const auto p = fit_projection(x, 12);
    for (int j = 0; j < 12; ++j) {
        const double ref = svd.singularValues()[j] * svd.singularValues()[j] / 299.0;
        EXPECT_NEAR(p.eigenvalues[j], ref, 1e-10 * ref);
    }
}

TEST(FitProjection, FullRankIsAnIsometryBeforeScaling) {
    std::mt19937_64 rng(2);
    const auto x = oracle::random_matrix<double>(200, 16, rng);
    const auto p = fit_projection(x, 16);
    auto y = apply_projection(p, x);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        for (std::size_t j = 0; j < 16; ++j) y(i, j) /= p.scale[j];
    }
    for (std::size_t a = 0; a < 40; ++a) {
        for (std::size_t b = a + 1; b < 40; ++b) {
            double dx = 0.0, dy = 0.0;
            for (std::size_t j = 0; j < 16; ++j) {
                dx += (x(a, j) - x(b, j)) * (x(a, j) - x(b, j));
                dy += (y(a, j) - y(b, j)) * (y(a, j) - y(b, j));
            }
            EXPECT_NEAR(std::sqrt(dy), std::sqrt(dx), 1e-5 * std::sqrt(dx));
        }
    }
}

TEST(ApplyProjection, WhitensTrainingData) {
    std::mt19937_64 rng(3);
    auto x = oracle::random_matrix<double>(2000, 20, rng);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < 20; ++j) x(i, j) *= 1.0 + static_cast<double>(j);
        x(i, 0) += 0.5 * x(i, 1);
    }
    const auto p = fit_projection(x, 8);
    const Eigen::MatrixXd cov = oracle::covariance(oracle::to_eigen(apply_projection(p, x)));
    EXPECT_LT((cov - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(ApplyProjection, MeanMapsToZero) {
    std::mt19937_64 rng(4);
    const auto x = oracle::random_matrix<double>(50, 5, rng);
    const auto p = fit_projection(x, 3);
    DescriptorMatrixD m(3, 5);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) m(i, j) = p.mean[j];
    }
    const auto y = apply_projection(p, m);
    for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(ApplyProjection, FirstPrincipalDirectionMapsToFirstBasisVector) {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_matrix<double>(100, 6, rng);
    const auto p = fit_projection(x, 4);
    DescriptorMatrixD row(1, 6);
    for (std::size_t j = 0; j < 6; ++j) row(0, j) = p.mean[j] + p.basis(j, 0) * std::sqrt(p.eigenvalues[0]);
    const auto y = apply_projection(p, row);
    EXPECT_NEAR(y(0, 0), 1.0, 1e-6);
    for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(y(0, j), 0.0, 1e-9);
}

TEST(ApplyProjection, DimensionMismatch) {
    std::mt19937_64 rng(6);
    const auto p = fit_projection(oracle::random_matrix<double>(20, 4, rng), 2);
    EXPECT_THROW(apply_projection(p, DescriptorMatrixD(1, 5)), Error);
}

TEST(FitProjection, Errors) {
    EXPECT_THROW(fit_projection(DescriptorMatrixD(10, 3, std::vector<double>(30, 1.0)), 2), Error);
    EXPECT_THROW(fit_projection(DescriptorMatrixD(1, 3), 1), Error);
    std::mt19937_64 rng(7);
    const auto x = oracle::random_matrix<double>(10, 3, rng);
    EXPECT_THROW(fit_projection(x, 0), Error);
    EXPECT_THROW(fit_projection(x, 4), Error);
    // rank 1 data cannot whiten two directions
    DescriptorMatrixD line(10, 2);
    for (std::size_t i = 0; i < 10; ++i) line(i, 0) = line(i, 1) = static_cast<double>(i);
    EXPECT_THROW(fit_projection(line, 2), Error);
    EXPECT_NO_THROW(fit_projection(line, 1));
}

TEST(FitProjection, SignConvention) {
    std::mt19937_64 rng(8);
    const auto p = fit_projection(oracle::random_matrix<double>(60, 5, rng), 5);
    for (int j = 0; j < 5; ++j) {
        Eigen::Index arg = 0;
        p.basis.col(j).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(p.basis(arg, j), 0.0);
    }
}

TEST(L2Normalize, Rows) {
    const auto n = l2_normalize(DescriptorMatrixD(2, 2, {3.0, 4.0, 0.0, 0.0}));
    EXPECT_DOUBLE_EQ(n.matrix(0, 0), 0.6);
    EXPECT_DOUBLE_EQ(n.matrix(0, 1), 0.8);
    EXPECT_EQ(n.matrix(1, 0), 0.0);
    EXPECT_EQ(n.zero_rows, 1u);
}

TEST(Prj1, RoundTripIsFloatQuantized) {
    std::mt19937_64 rng(9);
    const auto p = fit_projection(oracle::random_matrix<double>(40, 6, rng), 3);
    testing_support::TempDir dir("prj");
    save_projection(dir / "p.prj", p);
    const auto q = load_projection(dir / "p.prj");
    ASSERT_EQ(q.d_in, 6u);
    ASSERT_EQ(q.d_out, 3u);
    for (int j = 0; j < 6; ++j) EXPECT_EQ(q.mean[j], static_cast<double>(static_cast<float>(p.mean[j])));
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(q.scale[c], static_cast<double>(static_cast<float>(p.scale[c])));
        for (int r = 0; r < 6; ++r) EXPECT_EQ(q.basis(r, c), static_cast<double>(static_cast<float>(p.basis(r, c))));
    }
    EXPECT_EQ(encode_prj1(q), encode_prj1(p));
}

TEST(Prj1, RejectsCorruption) {
    std::mt19937_64 rng(10);
    auto bytes = encode_prj1(fit_projection(oracle::random_matrix<double>(20, 4, rng), 2));
    EXPECT_THROW(decode_prj1(bytes.substr(0, bytes.size() - 1), "t"), Error);
    EXPECT_THROW(decode_prj1(bytes + "x", "t"), Error);
    bytes[0] = 'X';
    EXPECT_THROW(decode_prj1(bytes, "t"), Error);
}
