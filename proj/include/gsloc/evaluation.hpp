#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsloc/dataset.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/geodesy.hpp"
#include "gsloc/graph.hpp"
#include "gsloc/retrieval.hpp"
#include "gsloc/smoother.hpp"

namespace gsloc {

enum class Regime { none, gs_support, gs_query, gs_both };

inline constexpr std::array<Regime, 4> kAllRegimes = {Regime::none, Regime::gs_support,
                                                      Regime::gs_query, Regime::gs_both};

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::none: return "none";
        case Regime::gs_support: return "gs_support";
        case Regime::gs_query: return "gs_query";
        case Regime::gs_both: return "gs_both";
    }
    return "none";
}

inline const char* display_name(Regime r) {
    switch (r) {
        case Regime::none: return "None";
        case Regime::gs_support: return "GS Support";
        case Regime::gs_query: return "GS Query";
        case Regime::gs_both: return "GS S+Q";
    }
    return "None";
}

inline Regime parse_regime(std::string_view s) {
    for (auto r : kAllRegimes) {
        if (s == to_string(r)) return r;
    }
    fail(ErrorKind::invalid_argument, "unknown regime '" + std::string(s) + "'");
}

inline bool smooths_support(Regime r) { return r == Regime::gs_support || r == Regime::gs_both; }
inline bool smooths_query(Regime r) { return r == Regime::gs_query || r == Regime::gs_both; }

inline PoseStrategy parse_pose_strategy(std::string_view s) {
    if (s == "top1") return PoseStrategy::top1;
    if (s == "weighted_topk") return PoseStrategy::weighted_topk;
    fail(ErrorKind::invalid_argument, "unknown pose strategy '" + std::string(s) + "'");
}

struct EvalOptions {
    std::size_t k = 1;
    PoseStrategy strategy = PoseStrategy::top1;
    double threshold_m = 25.0;
    /// Use query GPS when building the query-side graph. Off by default: the
    /// query GPS is the ground truth being estimated.
    bool query_gps = false;
};

// JSON mapping for parameter records. Missing keys keep their defaults.

inline void to_json(nlohmann::json& j, const GraphParams& p) {
    j = nlohmann::json{{"alpha", p.alpha},
                       {"max_distance_m", p.max_distance_m},
                       {"betas", p.betas},
                       {"k_max", p.k_max},
                       {"gamma", p.gamma},
                       {"include_dist", p.include_dist},
                       {"include_seq", p.include_seq},
                       {"include_latent", p.include_latent},
                       {"decay_sign", p.decay_sign == DecaySign::negative ? "negative" : "positive"},
                       {"include_self_edges", p.include_self_edges}};
}

inline void from_json(const nlohmann::json& j, GraphParams& p) {
    p.alpha = j.value("alpha", p.alpha);
    p.max_distance_m = j.value("max_distance_m", p.max_distance_m);
    p.betas = j.value("betas", p.betas);
    p.k_max = j.value("k_max", p.betas.size());
    p.gamma = j.value("gamma", p.gamma);
    p.include_dist = j.value("include_dist", p.include_dist);
    p.include_seq = j.value("include_seq", p.include_seq);
    p.include_latent = j.value("include_latent", p.include_latent);
    const std::string sign = j.value("decay_sign", std::string("negative"));
    if (sign == "negative") {
        p.decay_sign = DecaySign::negative;
    } else if (sign == "positive") {
        p.decay_sign = DecaySign::positive;
    } else {
        fail(ErrorKind::invalid_argument, "decay_sign must be 'negative' or 'positive'");
    }
    p.include_self_edges = j.value("include_self_edges", p.include_self_edges);
}

inline void to_json(nlohmann::json& j, const EvalOptions& o) {
    j = nlohmann::json{{"k", o.k},
                       {"strategy", to_string(o.strategy)},
                       {"threshold_m", o.threshold_m},
                       {"query_gps", o.query_gps}};
}

inline void from_json(const nlohmann::json& j, EvalOptions& o) {
    o.k = j.value("k", o.k);
    o.strategy = parse_pose_strategy(j.value("strategy", std::string(to_string(o.strategy))));
    o.threshold_m = j.value("threshold_m", o.threshold_m);
    o.query_gps = j.value("query_gps", o.query_gps);
}

struct EvalReport {
    std::vector<double> per_query_error_m;
    double median_error_m = 0.0;
    double acc_at_threshold = 0.0;
    double threshold_m = 25.0;
    Regime regime = Regime::none;
    nlohmann::json config_snapshot;
};

struct AblationRow {
    bool use_dist = false;
    bool use_seq = false;
    bool use_latent = false;
    double median_error_m = 0.0;
    double acc_at_threshold = 0.0;
};

struct SweepRow {
    unsigned m = 0;
    double acc_at_threshold = 0.0;
    double median_error_m = 0.0;
};

inline double localization_error(const PoseEstimate& estimate, GeoPoint truth) {
    return haversine_m(estimate.position(), truth);
}

/// Median; even-length lists average the two central values. Empty -> NaN.
inline double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    const auto n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

/// Fraction of errors strictly below the threshold.
inline double accuracy_below(std::span<const double> errors, double threshold_m) {
    if (errors.empty()) return 0.0;
    const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold_m; });
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

/// Query-side graph parameters: the distance kernel needs query GPS.
inline GraphParams query_graph_params(GraphParams params, const EvalOptions& options) {
    params.include_dist = params.include_dist && options.query_gps;
    return params;
}

template <typename T>
SmoothingOperator build_operator(std::span<const ImageRecord> records,
                                 const BasicDescriptorMatrix<T>& descriptors,
                                 const GraphParams& params) {
    return normalize(build_weight_matrix(records, descriptors, params), params);
}

inline SmoothingOperator support_operator(const Dataset& support, const GraphParams& params) {
    return build_operator(support.records, support.descriptors, params);
}

/// Query records' GPS is read only if options.query_gps is set.
inline SmoothingOperator query_operator(const Dataset& query, const GraphParams& params,
                                        const EvalOptions& options) {
    return build_operator(query.records, query.descriptors, query_graph_params(params, options));
}

struct RetrievalOutcome {
    std::vector<Match> matches;
    std::vector<double> errors;
};

template <typename T>
RetrievalOutcome retrieve_and_score(const BasicDescriptorMatrix<T>& support_desc,
                                    const BasicDescriptorMatrix<T>& query_desc,
                                    std::span<const ImageRecord> support_records,
                                    std::span<const ImageRecord> query_records,
                                    const EvalOptions& options) {
    RetrievalOutcome out;
    out.matches = cosine_knn(query_desc, support_desc, options.k);
    out.errors.reserve(out.matches.size());
    for (const auto& m : out.matches) {
        const auto pose = infer_pose(m, support_records, options.strategy);
        out.errors.push_back(localization_error(pose, query_records[m.query_index].position()));
    }
    return out;
}

inline EvalReport make_report(std::vector<double> errors, Regime regime, const EvalOptions& options,
                              nlohmann::json snapshot) {
    EvalReport report;
    report.median_error_m = median(errors);
    report.acc_at_threshold = accuracy_below(errors, options.threshold_m);
    report.threshold_m = options.threshold_m;
    report.regime = regime;
    report.per_query_error_m = std::move(errors);
    report.config_snapshot = std::move(snapshot);
    return report;
}

inline nlohmann::json config_snapshot(const GraphParams& params, SmoothConfig cfg, Regime regime,
                                      const EvalOptions& options) {
    return nlohmann::json{{"graph", params},
                          {"query_graph", query_graph_params(params, options)},
                          {"smooth", {{"m", cfg.m}}},
                          {"regime", to_string(regime)},
                          {"retrieval", options}};
}

/// Evaluation with prebuilt operators; an operator is only dereferenced when
/// the regime smooths that side.
inline EvalReport evaluate_with_operators(const Dataset& support, const Dataset& query,
                                          const SmoothingOperator* support_op,
                                          const SmoothingOperator* query_op, SmoothConfig cfg,
                                          Regime regime, const EvalOptions& options,
                                          nlohmann::json snapshot,
                                          std::vector<Match>* matches_out = nullptr) {
    const bool ss = smooths_support(regime) && cfg.m > 0;
    const bool sq = smooths_query(regime) && cfg.m > 0;
    if ((ss && !support_op) || (sq && !query_op)) {
        fail(ErrorKind::invalid_argument, "missing smoothing operator for regime");
    }
    std::optional<DescriptorMatrix> s_smoothed;
    std::optional<DescriptorMatrix> q_smoothed;
    if (ss) s_smoothed = smooth(*support_op, support.descriptors, cfg);
    if (sq) q_smoothed = smooth(*query_op, query.descriptors, cfg);
    auto outcome = retrieve_and_score(s_smoothed ? *s_smoothed : support.descriptors,
                                      q_smoothed ? *q_smoothed : query.descriptors, support.records,
                                      query.records, options);
    if (matches_out) *matches_out = std::move(outcome.matches);
    return make_report(std::move(outcome.errors), regime, options, std::move(snapshot));
}

inline EvalReport evaluate_regime(const Dataset& support, const Dataset& query,
                                  const GraphParams& params, SmoothConfig cfg, Regime regime,
                                  const EvalOptions& options = {}) {
    params.validate();
    std::optional<SmoothingOperator> s_op;
    std::optional<SmoothingOperator> q_op;
    if (smooths_support(regime) && cfg.m > 0) s_op = support_operator(support, params);
    if (smooths_query(regime) && cfg.m > 0) q_op = query_operator(query, params, options);
    return evaluate_with_operators(support, query, s_op ? &*s_op : nullptr, q_op ? &*q_op : nullptr,
                                   cfg, regime, options, config_snapshot(params, cfg, regime, options));
}

/// Kernel subsets in canonical order; the first (all off) is the baseline.
inline constexpr std::array<std::array<bool, 3>, 8> kAblationSubsets = {{
    {false, false, false},
    {true, false, false},
    {false, true, false},
    {false, false, true},
    {true, true, false},
    {true, false, true},
    {false, true, true},
    {true, true, true},
}};

inline std::vector<AblationRow> run_ablation(const Dataset& support, const Dataset& query,
                                             const GraphParams& params, SmoothConfig cfg,
                                             const EvalOptions& options = {},
                                             Regime regime = Regime::gs_support) {
    std::vector<AblationRow> rows;
    for (const auto& subset : kAblationSubsets) {
        GraphParams p = params;
        p.include_dist = subset[0];
        p.include_seq = subset[1];
        p.include_latent = subset[2];
        const auto report = evaluate_regime(support, query, p, cfg, regime, options);
        rows.push_back({subset[0], subset[1], subset[2], report.median_error_m, report.acc_at_threshold});
    }
    return rows;
}

inline std::vector<SweepRow> sweep_m(const Dataset& support, const Dataset& query,
                                     const GraphParams& params, std::span<const unsigned> m_values,
                                     const EvalOptions& options = {}) {
    params.validate();
    std::optional<SmoothingOperator> s_op;
    std::optional<SmoothingOperator> q_op;
    if (std::any_of(m_values.begin(), m_values.end(), [](unsigned m) { return m > 0; })) {
        s_op = support_operator(support, params);
        q_op = query_operator(query, params, options);
    }
    std::vector<SweepRow> rows;
    for (unsigned m : m_values) {
        const SmoothConfig cfg{m};
        const auto report =
            evaluate_with_operators(support, query, s_op ? &*s_op : nullptr, q_op ? &*q_op : nullptr,
                                    cfg, Regime::gs_both, options, {});
        rows.push_back({m, report.acc_at_threshold, report.median_error_m});
    }
    return rows;
}

struct ParameterGrid {
    GraphParams base;
    std::vector<double> alphas;
    std::vector<std::vector<double>> beta_sets;
    std::vector<double> gammas;
    std::vector<double> max_distances_m;
    std::vector<unsigned> m_values;

    std::size_t cardinality() const {
        return alphas.size() * beta_sets.size() * gammas.size() * max_distances_m.size() * m_values.size();
    }
};

struct GridCell {
    std::size_t index = 0;
    GraphParams params;
    SmoothConfig cfg;
    double acc_at_threshold = 0.0;
    double median_error_m = 0.0;
};

struct GridResult {
    GraphParams best_params;
    SmoothConfig best_cfg;
    std::size_t best_index = 0;
    std::vector<GridCell> table;
};

/// Exhaustive search maximizing accuracy; ties go to lower median error, then
/// to the earlier cell in enumeration order (alpha, betas, gamma,
/// max_distance, m; m varies fastest).
inline GridResult grid_search(const Dataset& support, const Dataset& validation,
                              const ParameterGrid& grid, const EvalOptions& options = {},
                              Regime regime = Regime::gs_support) {
    if (grid.cardinality() == 0) fail(ErrorKind::invalid_argument, "empty parameter grid");
    GridResult result;
    std::size_t index = 0;
    for (double alpha : grid.alphas) {
        for (const auto& betas : grid.beta_sets) {
            for (double gamma : grid.gammas) {
                for (double max_d : grid.max_distances_m) {
                    GraphParams p = grid.base;
                    p.alpha = alpha;
                    p.betas = betas;
                    p.k_max = betas.size();
                    p.gamma = gamma;
                    p.max_distance_m = max_d;
                    p.validate();
                    // One graph build per parameter cell, shared across m.
                    std::optional<SmoothingOperator> s_op;
                    std::optional<SmoothingOperator> q_op;
                    for (unsigned m : grid.m_values) {
                        const SmoothConfig cfg{m};
                        if (m > 0 && smooths_support(regime) && !s_op) s_op = support_operator(support, p);
                        if (m > 0 && smooths_query(regime) && !q_op) q_op = query_operator(validation, p, options);
                        const auto report = evaluate_with_operators(
                            support, validation, s_op ? &*s_op : nullptr, q_op ? &*q_op : nullptr, cfg,
                            regime, options, {});
                        result.table.push_back({index++, p, cfg, report.acc_at_threshold, report.median_error_m});
                    }
                }
            }
        }
    }
    auto better = [](const GridCell& a, const GridCell& b) {
        if (a.acc_at_threshold != b.acc_at_threshold) return a.acc_at_threshold > b.acc_at_threshold;
        if (a.median_error_m != b.median_error_m) return a.median_error_m < b.median_error_m;
        return a.index < b.index;
    };
    const auto& best = *std::min_element(result.table.begin(), result.table.end(), better);
    result.best_params = best.params;
    result.best_cfg = best.cfg;
    result.best_index = best.index;
    return result;
}

// ---- rendering -------------------------------------------------------------

inline std::string format_fixed(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

inline std::string format_percent(double fraction) { return format_fixed(100.0 * fraction, 2) + "%"; }

inline std::string format_meters(double m) { return format_fixed(m, 2) + "m"; }

/// Parameters in `alpha = 0.25, beta1 = 0.75, ..., m=2` form.
inline std::string format_parameters(const GraphParams& p, SmoothConfig cfg) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    std::string out = "alpha = " + num(p.alpha);
    for (std::size_t k = 0; k < p.betas.size(); ++k) {
        out += ", beta" + std::to_string(k + 1) + " = " + num(p.betas[k]);
    }
    out += ", k_max = " + std::to_string(p.k_max);
    out += ", gamma = " + num(p.gamma);
    out += ", max_distance = " + num(p.max_distance_m);
    out += ", m=" + std::to_string(cfg.m);
    return out;
}

/// Regime comparison table: one column per report, accuracy and median rows.
inline std::string render_regime_table(std::span<const EvalReport> reports) {
    if (reports.empty()) return {};
    const std::string acc_label = "acc < " + format_fixed(reports.front().threshold_m, 0) + "m";
    std::vector<std::array<std::string, 3>> cols;
    for (const auto& r : reports) {
        cols.push_back({display_name(r.regime), format_percent(r.acc_at_threshold),
                        format_meters(r.median_error_m)});
    }
    const std::array<std::string, 3> labels = {"Measure", acc_label, "median distance"};
    std::size_t lw = 0;
    for (const auto& l : labels) lw = std::max(lw, l.size());
    std::vector<std::size_t> widths;
    for (const auto& c : cols) {
        widths.push_back(std::max({c[0].size(), c[1].size(), c[2].size()}));
    }
    std::string out;
    for (int row = 0; row < 3; ++row) {
        std::string line = labels[row] + std::string(lw - labels[row].size(), ' ');
        for (std::size_t c = 0; c < cols.size(); ++c) {
            line += " | " + cols[c][row] + std::string(widths[c] - cols[c][row].size(), ' ');
        }
        out += line + "\n";
        if (row == 0) out += std::string(line.size(), '-') + "\n";
    }
    return out;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return nlohmann::json{{"regime", to_string(r.regime)},
                          {"n_queries", r.per_query_error_m.size()},
                          {"median_error_m", r.median_error_m},
                          {"acc_at_threshold", r.acc_at_threshold},
                          {"threshold_m", r.threshold_m},
                          {"per_query_error_m", r.per_query_error_m},
                          {"config", r.config_snapshot}};
}

/// Per-query CSV `query_id,error_m,within_threshold`.
inline std::string format_errors_csv(const EvalReport& r, std::span<const ImageRecord> query_records) {
    std::string out = "query_id,error_m,within_threshold\n";
    char buf[64];
    for (std::size_t i = 0; i < r.per_query_error_m.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.per_query_error_m[i]);
        out += query_records[i].image_id + "," + buf + "," +
               (r.per_query_error_m[i] < r.threshold_m ? "1" : "0") + "\n";
    }
    return out;
}

inline std::string format_ablation_csv(std::span<const AblationRow> rows) {
    std::string out = "use_dist,use_seq,use_latent,median_error_m,acc_at_threshold\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6f\n", r.use_dist, r.use_seq, r.use_latent,
                      r.median_error_m, r.acc_at_threshold);
        out += buf;
    }
    return out;
}

inline std::string format_sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "m,acc_at_threshold,median_error_m\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%u,%.6f,%.6f\n", r.m, r.acc_at_threshold, r.median_error_m);
        out += buf;
    }
    return out;
}

/// Two whitespace-separated columns (m, accuracy) for external plotting.
inline std::string format_sweep_plot(std::span<const SweepRow> rows) {
    std::string out = "m acc\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%u %.6f\n", r.m, r.acc_at_threshold);
        out += buf;
    }
    return out;
}

inline std::string format_grid_csv(std::span<const GridCell> cells) {
    std::string out = "index,alpha,betas,gamma,max_distance_m,m,acc_at_threshold,median_error_m\n";
    char buf[256];
    for (const auto& c : cells) {
        std::string betas;
        for (std::size_t k = 0; k < c.params.betas.size(); ++k) {
            char b[32];
            std::snprintf(b, sizeof(b), "%s%.6g", k ? ";" : "", c.params.betas[k]);
            betas += b;
        }
        std::snprintf(buf, sizeof(buf), "%zu,%.6g,%s,%.6g,%.6g,%u,%.6f,%.6f\n", c.index, c.params.alpha,
                      betas.c_str(), c.params.gamma, c.params.max_distance_m, c.cfg.m,
                      c.acc_at_threshold, c.median_error_m);
        out += buf;
    }
    return out;
}

}  // namespace gsloc
