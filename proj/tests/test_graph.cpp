#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "gsloc/graph.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace gsloc;

namespace {

ImageRecord at(const std::string& id, const std::string& seq, std::uint32_t frame, double north_m) {
    return {id, seq, frame, oracle::lat_north_of(-34.9285, north_m), 138.6007};
}

GraphParams only(bool dist, bool seq, bool latent) {
    GraphParams p;
    p.include_dist = dist;
    p.include_seq = seq;
    p.include_latent = latent;
    return p;
}

std::vector<ImageRecord> sequence(std::size_t n) {
    std::vector<ImageRecord> r;
    for (std::uint32_t i = 0; i < n; ++i) r.push_back(at("i" + std::to_string(i), "s", i, 1000.0 * i));
    return r;
}

}  // namespace

TEST(WDist, ColocatedPairWeighsOne) {
    const auto g = build_w_dist(std::vector{at("a", "s", 0, 0), at("b", "t", 0, 0)}, GraphParams{});
    EXPECT_EQ(g.weight(0, 1), 1.0);
    EXPECT_EQ(g.weight(1, 0), 1.0);
}

TEST(WDist, FourMetresIsOneOverE) {
    const auto r = std::vector{at("a", "s", 0, 0), at("b", "t", 0, 4.0)};
    const double d = oracle::chord_distance_m(r[0].lat, r[0].lon, r[1].lat, r[1].lon);
    ASSERT_NEAR(d, 4.0, 1e-6);
    EXPECT_NEAR(build_w_dist(r, GraphParams{}).weight(0, 1), 0.36787944117144233, 1e-9);
}

TEST(WDist, CutoffAndPositiveDecay) {
    EXPECT_EQ(build_w_dist(std::vector{at("a", "s", 0, 0), at("b", "t", 0, 30.0)}, GraphParams{}).nnz(), 0u);
    GraphParams p;
    p.decay_sign = DecaySign::positive;
    p.alpha = 0.1;
    const auto g = build_w_dist(std::vector{at("a", "s", 0, 0), at("b", "t", 0, 10.0)}, p);
    EXPECT_NEAR(g.weight(0, 1), std::exp(1.0), 1e-6);
}

TEST(WDist, SpatialHashMatchesAllPairs) {
    std::mt19937_64 rng(21);
    for (double extent : {50.0, 200.0, 1000.0}) {
        const auto cloud = oracle::random_cloud(600, 51.5, -0.12, extent, rng);
        GraphParams p;
        const auto g = build_w_dist(cloud, p);
        const auto ref = oracle::all_pairs_dist(cloud, p);
        EXPECT_EQ(g.upper(), ref);
    }
}

TEST(WSeq, Gaps) {
    GraphParams p;
    const auto g = build_w_seq(sequence(5), p);
    EXPECT_EQ(g.weight(0, 1), 0.75);
    EXPECT_EQ(g.weight(0, 2), 0.0625);
    EXPECT_EQ(g.weight(0, 3), 0.0625);
    EXPECT_EQ(g.weight(0, 4), 0.0);
}

TEST(WSeq, SequenceBoundary) {
    const auto g = build_w_seq(std::vector{at("a", "s", 0, 0), at("b", "t", 1, 0)}, GraphParams{});
    EXPECT_EQ(g.nnz(), 0u);
}

TEST(WSeq, FrameGapsNotRowGaps) {
    std::vector<ImageRecord> r{at("a", "s", 0, 0), at("b", "s", 2, 0), at("c", "s", 9, 0)};
    const auto g = build_w_seq(r, GraphParams{});
    EXPECT_EQ(g.weight(0, 1), 0.0625);
    EXPECT_EQ(g.weight(1, 2), 0.0);
}

TEST(WLatent, CosineClamp) {
    const auto gate = WeightedGraph::from_upper(2, {{0, 1, 1.0}});
    GraphParams p;
    EXPECT_NEAR(build_w_latent(DescriptorMatrixD(2, 2, {1, 2, 1, 2}), gate, p).weight(0, 1), 0.33, 1e-15);
    EXPECT_EQ(build_w_latent(DescriptorMatrixD(2, 2, {1, 0, 0, 1}), gate, p).nnz(), 0u);
    const double c = std::sqrt(3.0) / 2.0;
    EXPECT_EQ(build_w_latent(DescriptorMatrixD(2, 2, {1, 0, -0.5, c}), gate, p).nnz(), 0u);
    EXPECT_EQ(build_w_latent(DescriptorMatrixD(2, 2, {0, 0, 1, 1}), gate, p).nnz(), 0u);
}

TEST(WLatent, OnlyOnGatedPairs) {
    const auto gate = WeightedGraph::from_upper(3, {{0, 1, 1.0}});
    const auto g = build_w_latent(DescriptorMatrixD(3, 1, {1, 1, 1}), gate, GraphParams{});
    EXPECT_EQ(g.nnz(), 2u);
    EXPECT_FALSE(g.contains(0, 2));
}

TEST(Combine, SumsAndUnions) {
    const auto a = WeightedGraph::from_upper(3, {{0, 1, 0.75}});
    const auto b = WeightedGraph::from_upper(3, {{0, 1, 0.33}, {1, 2, 0.5}});
    const auto c = combine({a, b});
    EXPECT_DOUBLE_EQ(c.weight(0, 1), 1.08);
    EXPECT_EQ(c.weight(2, 1), 0.5);
    EXPECT_EQ(combine({a}), a);
    EXPECT_THROW(combine({a, WeightedGraph(4)}), Error);
}

TEST(WeightMatrix, Symmetric) {
    std::mt19937_64 rng(22);
    const auto cloud = oracle::random_cloud(300, 10.0, 10.0, 150.0, rng);
    const auto desc = oracle::random_matrix<float>(300, 8, rng);
    const auto w = build_weight_matrix(cloud, desc, GraphParams{});
    for (const auto& e : w.entries()) EXPECT_EQ(w.weight(e.j, e.i), e.w);
}

TEST(WeightMatrix, LatentOnlyHasNoEdges) {
    std::mt19937_64 rng(23);
    const auto cloud = oracle::random_cloud(100, 10.0, 10.0, 50.0, rng);
    const auto desc = oracle::random_matrix<float>(100, 4, rng);
    const auto w = build_weight_matrix(cloud, desc, only(false, false, true));
    EXPECT_EQ(w.nnz(), 0u);
    EXPECT_EQ(normalize(w, GraphParams{}), SmoothingOperator::identity(100));
}

TEST(WeightMatrix, MatchesDenseSumOfKernels) {
    std::mt19937_64 rng(24);
    const auto cloud = oracle::random_cloud(120, -34.9, 138.6, 80.0, rng);
    const auto desc = oracle::random_matrix<double>(120, 5, rng);
    GraphParams p;
    const auto w = build_weight_matrix(cloud, desc, p);
    Eigen::MatrixXd dist = oracle::dense_weights(120, oracle::all_pairs_dist(cloud, p));
    Eigen::MatrixXd seq = Eigen::MatrixXd::Zero(120, 120);
    for (std::size_t i = 0; i < 120; ++i) {
        for (std::size_t j = 0; j < 120; ++j) {
            if (i == j || cloud[i].sequence_id != cloud[j].sequence_id) continue;
            const long gap = std::labs(long(cloud[i].frame_index) - long(cloud[j].frame_index));
            if (gap >= 1 && gap <= 3) seq(i, j) = p.betas[gap - 1];
        }
    }
    const Eigen::MatrixXd x = oracle::to_eigen(desc);
    Eigen::MatrixXd ref = dist + seq;
    for (int i = 0; i < 120; ++i) {
        for (int j = 0; j < 120; ++j) {
            if (dist(i, j) > 0.0 || seq(i, j) > 0.0) {
                const double cosv = x.row(i).dot(x.row(j)) / (x.row(i).norm() * x.row(j).norm());
                ref(i, j) += p.gamma * std::max(0.0, cosv);
            }
        }
    }
    Eigen::MatrixXd got = Eigen::MatrixXd::Zero(120, 120);
    for (const auto& e : w.entries()) got(e.i, e.j) = e.w;
    EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Normalize, PathGraph) {
    const auto w = WeightedGraph::from_upper(3, {{0, 1, 1.0}, {1, 2, 1.0}});
    const auto op = normalize(w, GraphParams{});
    Eigen::Matrix3d expected;
    expected << 0, 1, 0, 0.5, 0, 0.5, 0, 1, 0;
    EXPECT_EQ(oracle::to_dense(op), expected);
    EXPECT_EQ(oracle::dense_normalize(oracle::dense_weights(3, w.upper()), false), expected);
    EXPECT_TRUE(op.isolated_vertices.empty());
}

TEST(Normalize, IsolatedVertex) {
    const auto op = normalize(WeightedGraph::from_upper(3, {{0, 1, 2.0}}), GraphParams{});
    ASSERT_EQ(op.isolated_vertices, std::vector<std::uint32_t>{2});
    EXPECT_EQ(oracle::to_dense(op)(2, 2), 1.0);
}

TEST(Normalize, SelfEdgesMatchDenseOracle) {
    std::mt19937_64 rng(25);
    GraphParams p;
    p.include_self_edges = true;
    const auto w = oracle::random_graph(60, 0.1, 0.1, rng);
    const auto op = normalize(w, p);
    const auto ref = oracle::dense_normalize(oracle::dense_weights(60, w.upper()), true);
    EXPECT_LT((oracle::to_dense(op) - ref).cwiseAbs().maxCoeff(), 1e-15);
    for (std::size_t i = 0; i < op.n; ++i) {
        for (auto k = op.row_offsets[i] + 1; k < op.row_offsets[i + 1]; ++k) {
            EXPECT_LT(op.columns[k - 1], op.columns[k]);
        }
    }
}

TEST(Normalize, RowsSumToOne) {
    std::mt19937_64 rng(26);
    for (int t = 0; t < 20; ++t) {
        const auto op = normalize(oracle::random_graph(100, 0.05, 0.2, rng), GraphParams{});
        for (std::size_t i = 0; i < op.n; ++i) {
            double s = 0.0;
            for (auto k = op.row_offsets[i]; k < op.row_offsets[i + 1]; ++k) s += op.values[k];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Normalize, SpectrumWithinUnitInterval) {
    std::mt19937_64 rng(27);
    for (int t = 0; t < 10; ++t) {
        const Eigen::MatrixXd a = oracle::to_dense(normalize(oracle::random_graph(40, 0.2, 0.1, rng), GraphParams{}));
        Eigen::EigenSolver<Eigen::MatrixXd> es(a);
        for (int k = 0; k < 40; ++k) {
            EXPECT_NEAR(es.eigenvalues()[k].imag(), 0.0, 1e-9);
            EXPECT_LE(std::abs(es.eigenvalues()[k].real()), 1.0 + 1e-9);
        }
    }
}

TEST(Normalize, BipartiteHasEigenvalueMinusOne) {
    std::vector<Edge> up;
    for (std::uint32_t i = 0; i < 4; ++i) {
        for (std::uint32_t j = 4; j < 7; ++j) up.push_back({i, j, 1.0 + i + j});
    }
    const Eigen::MatrixXd a = oracle::to_dense(normalize(WeightedGraph::from_upper(7, up), GraphParams{}));
    Eigen::EigenSolver<Eigen::MatrixXd> es(a);
    double lowest = 2.0;
    for (int k = 0; k < 7; ++k) lowest = std::min(lowest, es.eigenvalues()[k].real());
    EXPECT_NEAR(lowest, -1.0, 1e-9);
}

TEST(WeightedGraph, RejectsBadEdges) {
    EXPECT_THROW(WeightedGraph::from_upper(3, {{1, 1, 1.0}}), Error);
    EXPECT_THROW(WeightedGraph::from_upper(3, {{0, 3, 1.0}}), Error);
    EXPECT_THROW(WeightedGraph::from_upper(3, {{0, 1, 0.0}}), Error);
    EXPECT_THROW(WeightedGraph::from_upper(3, {{0, 1, 1.0}, {0, 1, 2.0}}), Error);
}

TEST(GraphParams, Validates) {
    GraphParams p;
    p.betas = {0.5};
    EXPECT_THROW(p.validate(), Error);
    p = GraphParams{};
    p.alpha = 0.0;
    EXPECT_THROW(p.validate(), Error);
    p = GraphParams{};
    p.gamma = -1.0;
    EXPECT_THROW(p.validate(), Error);
}

TEST(Adj1, RoundTrip) {
    std::mt19937_64 rng(28);
    const auto op = normalize(oracle::random_graph(80, 0.05, 0.2, rng), GraphParams{});
    testing_support::TempDir dir("adj");
    save_operator(dir / "a.adj", op);
    EXPECT_EQ(load_operator(dir / "a.adj"), op);
}

TEST(Adj1, RejectsCorruption) {
    const auto bytes = encode_adj1(SmoothingOperator::identity(3));
    EXPECT_THROW(decode_adj1(bytes.substr(0, bytes.size() - 2), "t"), Error);
    EXPECT_THROW(decode_adj1(bytes + "z", "t"), Error);
    auto bad = bytes;
    bad[bad.size() - 1] = static_cast<char>(0xff);  // NaN sign/exponent byte
    bad[bad.size() - 2] = static_cast<char>(0xff);
    EXPECT_THROW(decode_adj1(bad, "t"), Error);
    auto col = bytes;
    col[16 + 8 * 4] = 9;  // first column index
    EXPECT_THROW(decode_adj1(col, "t"), Error);
}
