#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsloc/binary_io.hpp"
#include "gsloc/dataset.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/geodesy.hpp"

namespace gsloc {

enum class DecaySign { negative, positive };

struct GraphParams {
    double alpha = 0.25;             // distance kernel sharpness, per meter
    double max_distance_m = 25.0;
    std::vector<double> betas = {0.75, 0.0625, 0.0625};
    std::size_t k_max = 3;
    double gamma = 0.33;
    bool include_dist = true;
    bool include_seq = true;
    bool include_latent = true;
    DecaySign decay_sign = DecaySign::negative;
    bool include_self_edges = false;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) fail(ErrorKind::invalid_argument, "alpha must be positive");
        if (!(max_distance_m > 0.0) || !std::isfinite(max_distance_m)) {
            fail(ErrorKind::invalid_argument, "max_distance_m must be positive");
        }
        if (k_max == 0) fail(ErrorKind::invalid_argument, "k_max must be positive");
        if (betas.size() != k_max) {
            fail(ErrorKind::invalid_argument, "expected " + std::to_string(k_max) + " betas, got " +
                                                  std::to_string(betas.size()));
        }
        for (double b : betas) {
            if (!(b > 0.0) || !std::isfinite(b)) fail(ErrorKind::invalid_argument, "betas must be positive");
        }
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail(ErrorKind::invalid_argument, "gamma must be nonnegative");
    }

    friend bool operator==(const GraphParams&, const GraphParams&) = default;
};

struct Edge {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    double w = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Symmetric sparse weights, both orientations stored, sorted by (i, j).
class WeightedGraph {
public:
    WeightedGraph() = default;
    explicit WeightedGraph(std::size_t n) : n_(n) {}

    /// Builds from pairs with i < j; each becomes (i,j) and (j,i).
    static WeightedGraph from_upper(std::size_t n, std::vector<Edge> upper) {
        WeightedGraph g(n);
        g.entries_.reserve(2 * upper.size());
        for (const auto& e : upper) {
            if (e.i >= e.j || e.j >= n) {
                fail(ErrorKind::invalid_argument, "from_upper expects i < j < n");
            }
            if (!(e.w > 0.0) || !std::isfinite(e.w)) {
                fail(ErrorKind::invalid_argument, "edge weights must be positive and finite");
            }
            g.entries_.push_back(e);
            g.entries_.push_back({e.j, e.i, e.w});
        }
        g.sort_and_check();
        return g;
    }

    std::size_t n() const { return n_; }
    std::size_t nnz() const { return entries_.size(); }
    std::span<const Edge> entries() const { return entries_; }

    double weight(std::uint32_t i, std::uint32_t j) const {
        const auto it = std::lower_bound(entries_.begin(), entries_.end(), Edge{i, j, 0.0}, by_index);
        return (it != entries_.end() && it->i == i && it->j == j) ? it->w : 0.0;
    }

    bool contains(std::uint32_t i, std::uint32_t j) const { return weight(i, j) > 0.0; }

    /// Upper-triangle pairs (i < j).
    std::vector<Edge> upper() const {
        std::vector<Edge> out;
        out.reserve(entries_.size() / 2);
        for (const auto& e : entries_) {
            if (e.i < e.j) out.push_back(e);
        }
        return out;
    }

    friend bool operator==(const WeightedGraph&, const WeightedGraph&) = default;

private:
    static bool by_index(const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    }

    void sort_and_check() {
        std::sort(entries_.begin(), entries_.end(), by_index);
        for (std::size_t k = 1; k < entries_.size(); ++k) {
            if (entries_[k].i == entries_[k - 1].i && entries_[k].j == entries_[k - 1].j) {
                fail(ErrorKind::invalid_argument, "duplicate edge (" + std::to_string(entries_[k].i) +
                                                      ", " + std::to_string(entries_[k].j) + ")");
            }
        }
    }

    std::size_t n_ = 0;
    std::vector<Edge> entries_;
};

/// Row-stochastic CSR operator A = D^-1 W.
struct SmoothingOperator {
    std::size_t n = 0;
    std::vector<std::uint64_t> row_offsets;  // n + 1
    std::vector<std::uint32_t> columns;
    std::vector<double> values;
    std::vector<std::uint32_t> isolated_vertices;

    std::size_t nnz() const { return values.size(); }

    static SmoothingOperator identity(std::size_t n) {
        SmoothingOperator op;
        op.n = n;
        op.row_offsets.resize(n + 1);
        op.columns.resize(n);
        op.values.assign(n, 1.0);
        op.isolated_vertices.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            op.row_offsets[i + 1] = i + 1;
            op.columns[i] = static_cast<std::uint32_t>(i);
            op.isolated_vertices[i] = static_cast<std::uint32_t>(i);
        }
        return op;
    }

    friend bool operator==(const SmoothingOperator&, const SmoothingOperator&) = default;
};

namespace detail {

inline void check_vertex_count(std::size_t n) {
    if (n > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorKind::invalid_argument, "too many vertices for 32-bit indices");
    }
}

inline std::vector<GeoPoint> positions(std::span<const ImageRecord> records) {
    std::vector<GeoPoint> pts;
    pts.reserve(records.size());
    for (const auto& r : records) pts.push_back(r.position());
    return pts;
}

}  // namespace detail

inline double distance_kernel(double dist_m, const GraphParams& params) {
    const double sign = params.decay_sign == DecaySign::negative ? -1.0 : 1.0;
    return std::exp(sign * params.alpha * dist_m);
}

/// Exponential distance kernel over pairs closer than max_distance_m. Candidate
/// pairs come from a spatial grid with cell size max_distance_m.
inline WeightedGraph build_w_dist(std::span<const ImageRecord> records, const GraphParams& params) {
    detail::check_vertex_count(records.size());
    const auto pts = detail::positions(records);
    const SpatialGrid grid(pts, params.max_distance_m);
    std::vector<Edge> upper;
    for (std::uint32_t i = 0; i < pts.size(); ++i) {
        grid.for_each_candidate(pts[i], [&](std::uint32_t j) {
            if (j <= i) return;
            const double d = haversine_m(pts[i], pts[j]);
            if (d < params.max_distance_m) {
                const double w = distance_kernel(d, params);
                if (w > 0.0 && std::isfinite(w)) upper.push_back({i, j, w});
            }
        });
    }
    return WeightedGraph::from_upper(records.size(), std::move(upper));
}

/// beta_k between frames exactly k apart in the same sequence, k <= k_max.
inline WeightedGraph build_w_seq(std::span<const ImageRecord> records, const GraphParams& params) {
    detail::check_vertex_count(records.size());
    std::map<std::string_view, std::vector<std::uint32_t>> by_sequence;
    for (std::uint32_t i = 0; i < records.size(); ++i) {
        by_sequence[records[i].sequence_id].push_back(i);
    }
    std::vector<Edge> upper;
    for (auto& [seq, members] : by_sequence) {
        std::stable_sort(members.begin(), members.end(), [&](auto a, auto b) {
            return records[a].frame_index < records[b].frame_index;
        });
        for (std::size_t a = 0; a < members.size(); ++a) {
            const auto fa = records[members[a]].frame_index;
            for (std::size_t b = a + 1; b < members.size(); ++b) {
                const auto gap = static_cast<std::uint64_t>(records[members[b]].frame_index) - fa;
                if (gap > params.k_max) break;
                if (gap == 0) continue;  // rejected by validate_records
                const auto lo = std::min(members[a], members[b]);
                const auto hi = std::max(members[a], members[b]);
                upper.push_back({lo, hi, params.betas[gap - 1]});
            }
        }
    }
    return WeightedGraph::from_upper(records.size(), std::move(upper));
}

/// gamma * max(0, cosine) on the pairs present in `gate`.
template <typename T>
WeightedGraph build_w_latent(const BasicDescriptorMatrix<T>& descriptors, const WeightedGraph& gate,
                             const GraphParams& params) {
    if (descriptors.rows() != gate.n()) {
        fail(ErrorKind::size_mismatch, "latent kernel: descriptor rows != gate vertex count");
    }
    std::vector<double> norms(descriptors.rows());
    for (std::size_t i = 0; i < descriptors.rows(); ++i) {
        double sq = 0.0;
        for (T v : descriptors.row(i)) sq += static_cast<double>(v) * static_cast<double>(v);
        norms[i] = std::sqrt(sq);
    }
    const auto pairs = gate.upper();
    std::vector<double> weights(pairs.size(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(pairs.size()); ++k) {
        const auto& e = pairs[static_cast<std::size_t>(k)];
        const double denom = norms[e.i] * norms[e.j];
        if (denom == 0.0) continue;
        const auto a = descriptors.row(e.i);
        const auto b = descriptors.row(e.j);
        double dot = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) dot += static_cast<double>(a[c]) * static_cast<double>(b[c]);
        weights[static_cast<std::size_t>(k)] = params.gamma * std::max(0.0, dot / denom);
    }
    std::vector<Edge> upper;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (weights[k] > 0.0) upper.push_back({pairs[k].i, pairs[k].j, weights[k]});
    }
    return WeightedGraph::from_upper(gate.n(), std::move(upper));
}

/// Entrywise sum.
inline WeightedGraph combine(std::span<const WeightedGraph> parts) {
    if (parts.empty()) fail(ErrorKind::invalid_argument, "combine needs at least one graph");
    const std::size_t n = parts.front().n();
    std::vector<Edge> all;
    for (const auto& g : parts) {
        if (g.n() != n) {
            fail(ErrorKind::size_mismatch, "combine: graphs have " + std::to_string(n) + " and " +
                                               std::to_string(g.n()) + " vertices");
        }
        const auto up = g.upper();
        all.insert(all.end(), up.begin(), up.end());
    }
    // Stable so that duplicates are summed in part order.
    std::stable_sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    std::vector<Edge> merged;
    for (const auto& e : all) {
        if (!merged.empty() && merged.back().i == e.i && merged.back().j == e.j) {
            merged.back().w += e.w;
        } else {
            merged.push_back(e);
        }
    }
    return WeightedGraph::from_upper(n, std::move(merged));
}

inline WeightedGraph combine(std::initializer_list<WeightedGraph> parts) {
    return combine(std::span<const WeightedGraph>(parts.begin(), parts.size()));
}

/// Union edge set with unit weights; used as the latent-kernel gate.
inline WeightedGraph edge_union(const WeightedGraph& a, const WeightedGraph& b) {
    auto sum = combine({a, b});
    auto up = sum.upper();
    for (auto& e : up) e.w = 1.0;
    return WeightedGraph::from_upper(sum.n(), std::move(up));
}

/// W = W_dist + W_seq + W_latent for the enabled kernels. The latent kernel
/// is gated by the enabled dist/seq kernels only.
template <typename T>
WeightedGraph build_weight_matrix(std::span<const ImageRecord> records,
                                  const BasicDescriptorMatrix<T>& descriptors,
                                  const GraphParams& params) {
    params.validate();
    if (descriptors.rows() != records.size()) {
        fail(ErrorKind::row_mismatch, "graph build: records and descriptors are not aligned");
    }
    const std::size_t n = records.size();
    WeightedGraph dist = params.include_dist ? build_w_dist(records, params) : WeightedGraph(n);
    WeightedGraph seq = params.include_seq ? build_w_seq(records, params) : WeightedGraph(n);
    std::vector<WeightedGraph> parts;
    if (params.include_latent && params.gamma > 0.0) {
        parts.push_back(build_w_latent(descriptors, edge_union(dist, seq), params));
    }
    parts.insert(parts.begin(), std::move(seq));
    parts.insert(parts.begin(), std::move(dist));
    return combine(parts);
}

/// A = D^-1 W. Edgeless vertices get A[v][v] = 1 and are reported isolated.
/// With include_self_edges every vertex carries an extra unit self-loop.
inline SmoothingOperator normalize(const WeightedGraph& w, const GraphParams& params) {
    detail::check_vertex_count(w.n());
    SmoothingOperator op;
    op.n = w.n();
    op.row_offsets.assign(w.n() + 1, 0);
    op.columns.reserve(w.nnz() + (params.include_self_edges ? w.n() : 0));
    op.values.reserve(op.columns.capacity());

    const auto entries = w.entries();
    std::size_t k = 0;
    for (std::uint32_t i = 0; i < w.n(); ++i) {
        const std::size_t begin = k;
        double degree = 0.0;
        while (k < entries.size() && entries[k].i == i) degree += entries[k++].w;
        const std::size_t end = k;

        if (begin == end) {
            op.isolated_vertices.push_back(i);
            op.columns.push_back(i);
            op.values.push_back(1.0);
        } else {
            const double self = params.include_self_edges ? 1.0 : 0.0;
            const double inv = 1.0 / (degree + self);
            bool self_written = !params.include_self_edges;
            for (std::size_t e = begin; e < end; ++e) {
                if (!self_written && entries[e].j > i) {
                    op.columns.push_back(i);
                    op.values.push_back(self * inv);
                    self_written = true;
                }
                op.columns.push_back(entries[e].j);
                op.values.push_back(entries[e].w * inv);
            }
            if (!self_written) {
                op.columns.push_back(i);
                op.values.push_back(self * inv);
            }
        }
        op.row_offsets[i + 1] = op.columns.size();
    }
    return op;
}

// ADJ1: "ADJ1", u32 n, u64 nnz, row offsets u64[n+1], columns u32[nnz],
// values f64[nnz]; little-endian.

inline std::string encode_adj1(const SmoothingOperator& op) {
    io::ByteWriter w;
    w.reserve(16 + 8 * (op.n + 1) + 12 * op.nnz());
    w.magic("ADJ1");
    w.u32(static_cast<std::uint32_t>(op.n));
    w.u64(op.nnz());
    for (auto v : op.row_offsets) w.u64(v);
    for (auto c : op.columns) w.u32(c);
    for (auto v : op.values) w.f64(v);
    return std::move(w).bytes();
}

inline SmoothingOperator decode_adj1(std::string_view bytes, const std::string& context) {
    io::ByteReader r(bytes, context);
    r.require(4, "header");
    r.expect_magic("ADJ1");
    r.require(12, "header");
    SmoothingOperator op;
    op.n = r.u32();
    const std::uint64_t nnz = r.u64();
    r.require(8 * (op.n + 1) + 12 * nnz, "payload");
    op.row_offsets.resize(op.n + 1);
    for (auto& v : op.row_offsets) v = r.u64();
    op.columns.resize(nnz);
    for (auto& c : op.columns) c = r.u32();
    op.values.resize(nnz);
    for (auto& v : op.values) v = r.f64();
    r.expect_end();

    if (op.row_offsets.front() != 0 || op.row_offsets.back() != nnz) {
        fail(ErrorKind::invalid_argument, context + ": inconsistent row offsets");
    }
    for (std::size_t i = 0; i < op.n; ++i) {
        const auto b = op.row_offsets[i];
        const auto e = op.row_offsets[i + 1];
        if (e < b) fail(ErrorKind::invalid_argument, context + ": row offsets not monotone");
        for (auto k = b; k < e; ++k) {
            if (op.columns[k] >= op.n) fail(ErrorKind::invalid_argument, context + ": column out of range");
            if (!std::isfinite(op.values[k]) || op.values[k] < 0.0) {
                fail(ErrorKind::non_finite, context + ": invalid operator value");
            }
        }
        // A lone unit diagonal is the isolated-vertex fallback.
        if (e - b == 1 && op.columns[b] == i && op.values[b] == 1.0) {
            op.isolated_vertices.push_back(static_cast<std::uint32_t>(i));
        }
    }
    return op;
}

inline void save_operator(const std::filesystem::path& path, const SmoothingOperator& op) {
    io::write_file_atomic(path, encode_adj1(op));
}

inline SmoothingOperator load_operator(const std::filesystem::path& path) {
    return decode_adj1(io::read_file(path), path.string());
}

}  // namespace gsloc
