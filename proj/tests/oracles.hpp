#pragma once

// Independent reference implementations used to check the library. Each one
// trades speed for obviousness and shares no code path with the routine it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gsloc/dataset.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/graph.hpp"
#include "gsloc/retrieval.hpp"

namespace oracle {

inline constexpr double kRadius = 6371000.0;

/// Great-circle distance from the chord between unit vectors.
inline double chord_distance_m(double lat1, double lon1, double lat2, double lon2) {
    const double d2r = std::numbers::pi / 180.0;
    auto unit = [&](double lat, double lon) {
        return Eigen::Vector3d(std::cos(lat * d2r) * std::cos(lon * d2r),
                               std::cos(lat * d2r) * std::sin(lon * d2r), std::sin(lat * d2r));
    };
    const double chord = (unit(lat1, lon1) - unit(lat2, lon2)).norm();
    return 2.0 * kRadius * std::asin(std::min(1.0, chord / 2.0));
}

/// Point at distance `d` due north along a meridian.
inline double lat_north_of(double lat, double d_m) { return lat + d_m / kRadius * 180.0 / std::numbers::pi; }

/// Quadratic distance-kernel builder.
inline std::vector<gsloc::Edge> all_pairs_dist(const std::vector<gsloc::ImageRecord>& r,
                                               const gsloc::GraphParams& p) {
    std::vector<gsloc::Edge> out;
    for (std::uint32_t i = 0; i < r.size(); ++i) {
        for (std::uint32_t j = i + 1; j < r.size(); ++j) {
            const double d = gsloc::haversine_m(r[i].position(), r[j].position());
            if (d < p.max_distance_m) {
                const double sign = p.decay_sign == gsloc::DecaySign::negative ? -1.0 : 1.0;
                out.push_back({i, j, std::exp(sign * p.alpha * d)});
            }
        }
    }
    return out;
}

/// Dense W from an edge list.
inline Eigen::MatrixXd dense_weights(std::size_t n, const std::vector<gsloc::Edge>& upper) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (const auto& e : upper) {
        w(e.i, e.j) += e.w;
        w(e.j, e.i) += e.w;
    }
    return w;
}

/// D^-1 W computed densely; edgeless rows become identity rows.
inline Eigen::MatrixXd dense_normalize(Eigen::MatrixXd w, bool self_edges) {
    if (self_edges) w.diagonal().array() += 1.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        const double s = w.row(i).sum();
        if (s > 0.0) {
            w.row(i) /= s;
        } else {
            w(i, i) = 1.0;
        }
    }
    return w;
}

inline Eigen::MatrixXd to_dense(const gsloc::SmoothingOperator& op) {
    const auto n = static_cast<Eigen::Index>(op.n);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < op.n; ++i) {
        for (auto k = op.row_offsets[i]; k < op.row_offsets[i + 1]; ++k) {
            a(static_cast<Eigen::Index>(i), op.columns[k]) = op.values[k];
        }
    }
    return a;
}

template <typename T>
Eigen::MatrixXd to_eigen(const gsloc::BasicDescriptorMatrix<T>& m) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.dim()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.dim(); ++j) out(i, j) = static_cast<double>(m(i, j));
    }
    return out;
}

/// Naive double loop with a full stable sort.
template <typename T>
std::vector<std::vector<gsloc::Neighbor>> naive_knn(const gsloc::BasicDescriptorMatrix<T>& q,
                                                    const gsloc::BasicDescriptorMatrix<T>& s, std::size_t k) {
    std::vector<std::vector<gsloc::Neighbor>> out(q.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::vector<gsloc::Neighbor> all;
        for (std::size_t j = 0; j < s.rows(); ++j) {
            double dot = 0.0, nq = 0.0, ns = 0.0;
            for (std::size_t c = 0; c < q.dim(); ++c) {
                const double a = q(i, c);
                const double b = s(j, c);
                dot += a * b;
                nq += a * a;
                ns += b * b;
            }
            double score = (nq > 0.0 && ns > 0.0) ? dot / (std::sqrt(nq) * std::sqrt(ns)) : 0.0;
            score = std::max(-1.0, std::min(1.0, score));
            all.push_back({j, score});
        }
        std::stable_sort(all.begin(), all.end(),
                         [](const gsloc::Neighbor& a, const gsloc::Neighbor& b) { return a.score > b.score; });
        all.resize(k);
        out[i] = all;
    }
    return out;
}

/// Sample covariance (1/(n-1)) of the rows.
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mean;
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

/// Random symmetric graph with some vertices forced edgeless.
inline gsloc::WeightedGraph random_graph(std::size_t n, double density, double isolated_fraction,
                                         std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<bool> isolated(n);
    for (std::size_t i = 0; i < n; ++i) isolated[i] = u(rng) < isolated_fraction;
    std::vector<gsloc::Edge> upper;
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = i + 1; j < n; ++j) {
            if (isolated[i] || isolated[j] || u(rng) >= density) continue;
            upper.push_back({i, j, 0.01 + 2.0 * u(rng)});
        }
    }
    return gsloc::WeightedGraph::from_upper(n, std::move(upper));
}

template <typename T>
gsloc::BasicDescriptorMatrix<T> random_matrix(std::size_t rows, std::size_t dim, std::mt19937_64& rng,
                                              double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    gsloc::BasicDescriptorMatrix<T> m(rows, dim);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dim; ++j) m(i, j) = static_cast<T>(g(rng));
    }
    return m;
}

/// Records scattered uniformly in a square of side `extent_m` around `origin`.
inline std::vector<gsloc::ImageRecord> random_cloud(std::size_t n, double lat0, double lon0, double extent_m,
                                                    std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5 * extent_m, 0.5 * extent_m);
    std::vector<gsloc::ImageRecord> out;
    const double d2r = std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double north = u(rng);
        const double east = u(rng);
        const double lat = lat0 + north / kRadius / d2r;
        const double lon = lon0 + east / (kRadius * std::cos(lat0 * d2r)) / d2r;
        out.push_back({"i" + std::to_string(i), "s" + std::to_string(i % 7), static_cast<std::uint32_t>(i / 7),
                       lat, lon});
    }
    return out;
}

}  // namespace oracle
