#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/graph.hpp"

namespace gsloc {

struct SmoothConfig {
    unsigned m = 2;
};

/// Columns processed per pass; one block row of doubles is 512 bytes.
inline constexpr std::size_t kSmoothColumnBlock = 64;

/// h(s) = A^m s as m successive sparse x dense products. Accumulation is in
/// double; the result is rounded to T once at the end.
template <typename T>
BasicDescriptorMatrix<T> smooth(const SmoothingOperator& op, const BasicDescriptorMatrix<T>& s,
                                SmoothConfig cfg) {
    if (op.n != s.rows()) {
        fail(ErrorKind::size_mismatch, "smoothing operator has " + std::to_string(op.n) +
                                           " vertices, signal has " + std::to_string(s.rows()) +
                                           " rows");
    }
    if (cfg.m == 0) return s;

    const std::size_t n = s.rows();
    const std::size_t d = s.dim();
    BasicDescriptorMatrix<T> out(n, d);
    std::vector<double> cur;
    std::vector<double> next;

    for (std::size_t c0 = 0; c0 < d; c0 += kSmoothColumnBlock) {
        const std::size_t width = std::min(kSmoothColumnBlock, d - c0);
        cur.assign(n * width, 0.0);
        next.assign(n * width, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = s.row(i);
            for (std::size_t c = 0; c < width; ++c) cur[i * width + c] = static_cast<double>(r[c0 + c]);
        }
        for (unsigned it = 0; it < cfg.m; ++it) {
#pragma omp parallel for schedule(static)
            for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
                const auto i = static_cast<std::size_t>(ii);
                double* dst = next.data() + i * width;
                std::fill(dst, dst + width, 0.0);
                for (auto k = op.row_offsets[i]; k < op.row_offsets[i + 1]; ++k) {
                    const double a = op.values[k];
                    const double* src = cur.data() + static_cast<std::size_t>(op.columns[k]) * width;
                    for (std::size_t c = 0; c < width; ++c) dst[c] += a * src[c];
                }
            }
            cur.swap(next);
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto r = out.row(i);
            for (std::size_t c = 0; c < width; ++c) r[c0 + c] = static_cast<T>(cur[i * width + c]);
        }
    }
    return out;
}

inline constexpr std::size_t kDenseOracleLimit = 2000;

/// Densifies A, materializes A^m, then multiplies. Test oracle for smooth().
inline Eigen::MatrixXd dense_operator(const SmoothingOperator& op) {
    if (op.n > kDenseOracleLimit) {
        fail(ErrorKind::invalid_argument, "dense oracle limited to " +
                                              std::to_string(kDenseOracleLimit) + " vertices");
    }
    const auto n = static_cast<Eigen::Index>(op.n);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < op.n; ++i) {
        for (auto k = op.row_offsets[i]; k < op.row_offsets[i + 1]; ++k) {
            a(static_cast<Eigen::Index>(i), op.columns[k]) += op.values[k];
        }
    }
    return a;
}

template <typename T>
BasicDescriptorMatrix<T> smooth_dense_oracle(const SmoothingOperator& op,
                                             const BasicDescriptorMatrix<T>& s, SmoothConfig cfg) {
    if (op.n > kDenseOracleLimit) {
        fail(ErrorKind::invalid_argument, "dense oracle limited to " +
                                              std::to_string(kDenseOracleLimit) + " vertices");
    }
    if (op.n != s.rows()) fail(ErrorKind::size_mismatch, "dense oracle: operator/signal size mismatch");
    if (cfg.m == 0) return s;

    const auto n = static_cast<Eigen::Index>(op.n);
    const auto d = static_cast<Eigen::Index>(s.dim());
    const Eigen::MatrixXd a = dense_operator(op);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
    for (unsigned it = 0; it < cfg.m; ++it) power = power * a;

    Eigen::MatrixXd signal(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) signal(i, j) = static_cast<double>(s(i, j));
    }
    const Eigen::MatrixXd result = power * signal;
    BasicDescriptorMatrix<T> out(s.rows(), s.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) out(i, j) = static_cast<T>(result(i, j));
    }
    return out;
}

}  // namespace gsloc
