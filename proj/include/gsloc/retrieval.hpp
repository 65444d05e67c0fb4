#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gsloc/binary_io.hpp"
#include "gsloc/dataset.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/geodesy.hpp"

namespace gsloc {

struct Neighbor {
    std::size_t support_index = 0;
    double score = 0.0;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Match {
    std::size_t query_index = 0;
    std::vector<Neighbor> neighbors;  // descending score, ties by lower index
    bool zero_query = false;          // query row had zero norm; all scores 0
};

struct PoseEstimate {
    std::size_t query_index = 0;
    double lat = 0.0;
    double lon = 0.0;

    GeoPoint position() const { return {lat, lon}; }
};

enum class PoseStrategy { top1, weighted_topk };

inline const char* to_string(PoseStrategy s) { return s == PoseStrategy::top1 ? "top1" : "weighted_topk"; }

namespace detail {

template <typename T>
std::vector<double> row_norms(const BasicDescriptorMatrix<T>& m) {
    std::vector<double> norms(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sq = 0.0;
        for (T v : m.row(i)) sq += static_cast<double>(v) * static_cast<double>(v);
        norms[i] = std::sqrt(sq);
    }
    return norms;
}

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) acc += static_cast<double>(a[c]) * static_cast<double>(b[c]);
    return acc;
}

inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.support_index < b.support_index;
}

}  // namespace detail

/// Exact top-k cosine search. Zero-norm rows score 0 against everything.
template <typename T>
std::vector<Match> cosine_knn(const BasicDescriptorMatrix<T>& queries,
                              const BasicDescriptorMatrix<T>& support, std::size_t k) {
    if (queries.dim() != support.dim()) {
        fail(ErrorKind::size_mismatch, "query dim " + std::to_string(queries.dim()) +
                                           " != support dim " + std::to_string(support.dim()));
    }
    if (k == 0) fail(ErrorKind::invalid_argument, "k must be positive");
    if (k > support.rows()) {
        fail(ErrorKind::invalid_argument, "k = " + std::to_string(k) + " exceeds support size " +
                                              std::to_string(support.rows()));
    }
    const auto q_norms = detail::row_norms(queries);
    const auto s_norms = detail::row_norms(support);
    std::vector<Match> matches(queries.rows());

#pragma omp parallel
    {
        std::vector<Neighbor> scored(support.rows());
#pragma omp for schedule(dynamic, 16)
        for (std::int64_t qq = 0; qq < static_cast<std::int64_t>(queries.rows()); ++qq) {
            const auto q = static_cast<std::size_t>(qq);
            const auto qrow = queries.row(q);
            for (std::size_t s = 0; s < support.rows(); ++s) {
                const double denom = q_norms[q] * s_norms[s];
                const double score =
                    denom > 0.0 ? detail::dot(qrow, support.row(s)) / denom : 0.0;
                scored[s] = {s, std::clamp(score, -1.0, 1.0)};
            }
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                              scored.end(), detail::ranks_before);
            matches[q].query_index = q;
            matches[q].zero_query = q_norms[q] == 0.0;
            matches[q].neighbors.assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k));
        }
    }
    return matches;
}

/// top1 copies the best neighbor's fix; weighted_topk averages lat/lon with
/// clamped, renormalized similarity weights (not valid across the antimeridian).
inline PoseEstimate infer_pose(const Match& match, std::span<const ImageRecord> support_records,
                               PoseStrategy strategy = PoseStrategy::top1) {
    if (match.neighbors.empty()) fail(ErrorKind::invalid_argument, "match has no neighbors");
    const auto& best = support_records[match.neighbors.front().support_index];
    PoseEstimate top1{match.query_index, best.lat, best.lon};
    if (strategy == PoseStrategy::top1) return top1;

    double total = 0.0;
    double lat = 0.0;
    double lon = 0.0;
    for (const auto& nb : match.neighbors) {
        const double w = std::max(0.0, nb.score);
        const auto& rec = support_records[nb.support_index];
        total += w;
        lat += w * rec.lat;
        lon += w * rec.lon;
    }
    if (!(total > 0.0)) return top1;
    return {match.query_index, lat / total, lon / total};
}

/// CSV `query_id,rank,support_id,score`, rank starting at 1.
inline std::string format_matches_csv(std::span<const Match> matches,
                                      std::span<const ImageRecord> query_records,
                                      std::span<const ImageRecord> support_records) {
    std::string out = "query_id,rank,support_id,score\n";
    char buf[64];
    for (const auto& m : matches) {
        for (std::size_t r = 0; r < m.neighbors.size(); ++r) {
            const auto& nb = m.neighbors[r];
            std::snprintf(buf, sizeof(buf), "%.9g", nb.score);
            out += query_records[m.query_index].image_id;
            out += ',';
            out += std::to_string(r + 1);
            out += ',';
            out += support_records[nb.support_index].image_id;
            out += ',';
            out += buf;
            out += '\n';
        }
    }
    return out;
}

}  // namespace gsloc
