#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gsloc/binary_io.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"

namespace gsloc {

/// PCA projection followed by whitening: y = scale .* (basis^T (x - mean)).
struct Projection {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    Eigen::VectorXd mean;        // d_in
    Eigen::MatrixXd basis;       // d_in x d_out, orthonormal columns
    Eigen::VectorXd scale;       // d_out, 1 / sqrt(lambda_j + eps)
    Eigen::VectorXd eigenvalues; // d_out, descending; not persisted
};

/// Kept eigenvalues at or below this fraction of the total variance make the
/// fit rank-deficient.
inline constexpr double kRankTolerance = 1e-12;

/// Fits PCA + whitening on `x`. When `eps` is absent it defaults to
/// 1e-9 times the mean eigenvalue.
template <typename T>
Projection fit_projection(const BasicDescriptorMatrix<T>& x, std::size_t d_out,
                          std::optional<double> eps = std::nullopt) {
    const std::size_t n = x.rows();
    const std::size_t d = x.dim();
    if (n < 2) fail(ErrorKind::invalid_argument, "projection fit needs at least 2 rows");
    if (d_out == 0 || d_out > std::min(n - 1, d)) {
        fail(ErrorKind::invalid_argument, "d_out " + std::to_string(d_out) + " must be in [1, " +
                                              std::to_string(std::min(n - 1, d)) + "]");
    }
    if (eps && !(*eps >= 0.0 && std::isfinite(*eps))) {
        fail(ErrorKind::invalid_argument, "whitening eps must be finite and nonnegative");
    }

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(r[j]);
    }
    mean /= static_cast<double>(n);

    // Covariance accumulated over row chunks to bound the centered copy.
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    constexpr std::size_t kChunk = 2048;
    Eigen::MatrixXd centered;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t len = std::min(kChunk, n - start);
        centered.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < len; ++i) {
            const auto r = x.row(start + i);
            for (std::size_t j = 0; j < d; ++j) centered(i, j) = static_cast<double>(r[j]) - mean[j];
        }
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) fail(ErrorKind::invalid_argument, "eigendecomposition failed");
    const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
    const double trace = cov.trace();
    if (!(trace > 0.0)) fail(ErrorKind::invalid_argument, "zero-variance input, cannot whiten");

    // Descending order; equal eigenvalues keep the solver's relative order.
    std::vector<Eigen::Index> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return evals[a] > evals[b]; });

    const double mean_eig = trace / static_cast<double>(d);
    const double e = eps.value_or(1e-9 * mean_eig);

    Projection p;
    p.d_in = d;
    p.d_out = d_out;
    p.mean = std::move(mean);
    p.basis.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d_out));
    p.scale.resize(static_cast<Eigen::Index>(d_out));
    p.eigenvalues.resize(static_cast<Eigen::Index>(d_out));
    for (std::size_t j = 0; j < d_out; ++j) {
        const double lambda = evals[order[j]];
        if (!(lambda > kRankTolerance * trace)) {
            fail(ErrorKind::invalid_argument, "rank-deficient input: eigenvalue " +
                                                  std::to_string(j) + " is " +
                                                  std::to_string(lambda) + " (trace " +
                                                  std::to_string(trace) + ")");
        }
        Eigen::VectorXd v = solver.eigenvectors().col(order[j]);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;
        p.basis.col(static_cast<Eigen::Index>(j)) = v;
        p.eigenvalues[j] = lambda;
        p.scale[j] = 1.0 / std::sqrt(lambda + e);
    }
    return p;
}

template <typename T>
BasicDescriptorMatrix<T> apply_projection(const Projection& p, const BasicDescriptorMatrix<T>& x) {
    if (x.dim() != p.d_in) {
        fail(ErrorKind::size_mismatch, "projection expects dim " + std::to_string(p.d_in) +
                                           ", got " + std::to_string(x.dim()));
    }
    const std::size_t n = x.rows();
    BasicDescriptorMatrix<T> out(n, p.d_out);
    const Eigen::MatrixXd scaled_basis = p.basis * p.scale.asDiagonal();
    constexpr std::size_t kChunk = 2048;
    Eigen::MatrixXd centered;
    Eigen::MatrixXd projected;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t len = std::min(kChunk, n - start);
        centered.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(p.d_in));
        for (std::size_t i = 0; i < len; ++i) {
            const auto r = x.row(start + i);
            for (std::size_t j = 0; j < p.d_in; ++j) {
                centered(i, j) = static_cast<double>(r[j]) - p.mean[j];
            }
        }
        projected.noalias() = centered * scaled_basis;
        for (std::size_t i = 0; i < len; ++i) {
            auto dst = out.row(start + i);
            for (std::size_t j = 0; j < p.d_out; ++j) dst[j] = static_cast<T>(projected(i, j));
        }
    }
    return out;
}

template <typename T>
struct Normalized {
    BasicDescriptorMatrix<T> matrix;
    std::size_t zero_rows = 0;
};

/// Scales every nonzero row to unit Euclidean norm; zero rows stay zero and
/// are counted.
template <typename T>
Normalized<T> l2_normalize(BasicDescriptorMatrix<T> x) {
    Normalized<T> result;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        double sq = 0.0;
        for (T v : r) sq += static_cast<double>(v) * static_cast<double>(v);
        if (sq == 0.0) {
            ++result.zero_rows;
            continue;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (T& v : r) v = static_cast<T>(static_cast<double>(v) * inv);
    }
    result.matrix = std::move(x);
    return result;
}

// PRJ1: "PRJ1", u32 d_in, u32 d_out, mean[d_in], basis[d_in*d_out] column-major,
// scale[d_out]; all f32 little-endian.

inline std::string encode_prj1(const Projection& p) {
    io::ByteWriter w;
    w.reserve(12 + 4 * (p.d_in + p.d_in * p.d_out + p.d_out));
    w.magic("PRJ1");
    w.u32(static_cast<std::uint32_t>(p.d_in));
    w.u32(static_cast<std::uint32_t>(p.d_out));
    for (std::size_t i = 0; i < p.d_in; ++i) w.f32(static_cast<float>(p.mean[i]));
    for (std::size_t c = 0; c < p.d_out; ++c) {
        for (std::size_t r = 0; r < p.d_in; ++r) w.f32(static_cast<float>(p.basis(r, c)));
    }
    for (std::size_t j = 0; j < p.d_out; ++j) w.f32(static_cast<float>(p.scale[j]));
    return std::move(w).bytes();
}

inline Projection decode_prj1(std::string_view bytes, const std::string& context) {
    io::ByteReader r(bytes, context);
    r.require(4, "header");
    r.expect_magic("PRJ1");
    r.require(8, "header");
    Projection p;
    p.d_in = r.u32();
    p.d_out = r.u32();
    if (p.d_out > p.d_in) fail(ErrorKind::invalid_argument, context + ": d_out exceeds d_in");
    r.require(4 * (p.d_in + p.d_in * p.d_out + p.d_out), "payload");
    auto next = [&] {
        const float v = r.f32();
        if (!std::isfinite(v)) fail(ErrorKind::non_finite, context + ": non-finite value");
        return static_cast<double>(v);
    };
    p.mean.resize(static_cast<Eigen::Index>(p.d_in));
    for (std::size_t i = 0; i < p.d_in; ++i) p.mean[i] = next();
    p.basis.resize(static_cast<Eigen::Index>(p.d_in), static_cast<Eigen::Index>(p.d_out));
    for (std::size_t c = 0; c < p.d_out; ++c) {
        for (std::size_t row = 0; row < p.d_in; ++row) p.basis(row, c) = next();
    }
    p.scale.resize(static_cast<Eigen::Index>(p.d_out));
    for (std::size_t j = 0; j < p.d_out; ++j) {
        p.scale[j] = next();
        if (!(p.scale[j] > 0.0)) fail(ErrorKind::invalid_argument, context + ": non-positive scale");
    }
    r.expect_end();
    return p;
}

inline void save_projection(const std::filesystem::path& path, const Projection& p) {
    io::write_file_atomic(path, encode_prj1(p));
}

inline Projection load_projection(const std::filesystem::path& path) {
    return decode_prj1(io::read_file(path), path.string());
}

}  // namespace gsloc
