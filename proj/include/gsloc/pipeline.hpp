#pragma once

// End-to-end runs: load, filter, project, build graphs, smooth, retrieve and
// report, with every intermediate cached under a SHA-256 key of its inputs
// and parameters.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsloc/binary_io.hpp"
#include "gsloc/dataset.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/evaluation.hpp"
#include "gsloc/feature_prep.hpp"
#include "gsloc/graph.hpp"
#include "gsloc/hashing.hpp"
#include "gsloc/smoother.hpp"
#include "gsloc/synthetic.hpp"

namespace gsloc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct SplitPaths {
    std::string metadata;
    std::string descriptors;
};

struct ProjectionSettings {
    bool enabled = false;
    std::size_t d_out = 4096;
    std::optional<double> eps;  // default 1e-9 x mean eigenvalue
    bool renormalize = true;
};

/// Grid-search ranges. An empty list means "the configured value only".
struct GridSpec {
    std::vector<double> alphas;
    std::vector<std::vector<double>> betas;
    std::vector<double> gammas;
    std::vector<double> max_distances_m;
    std::vector<unsigned> m_values;
    Regime regime = Regime::gs_support;
};

struct RunConfig {
    SplitPaths support;
    SplitPaths query;
    std::string cache_dir = "cache";
    std::string out_dir = "out";
    GraphParams graph;
    SmoothConfig smooth;
    std::vector<Regime> regimes = {Regime::gs_both};
    EvalOptions retrieval;
    double filter_radius_m = 25.0;
    ProjectionSettings projection;
    std::vector<unsigned> sweep_m_values = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    Regime ablation_regime = Regime::gs_support;
    GridSpec grid;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = runtime default

    void validate() const {
        graph.validate();
        if (!(retrieval.threshold_m > 0.0)) fail(ErrorKind::invalid_argument, "threshold_m must be positive");
        if (!(filter_radius_m > 0.0)) fail(ErrorKind::invalid_argument, "filter_radius_m must be positive");
        if (retrieval.k == 0) fail(ErrorKind::invalid_argument, "retrieval k must be positive");
        if (regimes.empty()) fail(ErrorKind::invalid_argument, "at least one regime required");
        if (projection.enabled && projection.d_out == 0) {
            fail(ErrorKind::invalid_argument, "projection d_out must be positive");
        }
        if (threads < 0) fail(ErrorKind::invalid_argument, "threads must be nonnegative");
    }
};

// ---- JSON ------------------------------------------------------------------

inline json regimes_to_json(const std::vector<Regime>& regimes) {
    json arr = json::array();
    for (auto r : regimes) arr.push_back(to_string(r));
    return arr;
}

inline std::vector<Regime> regimes_from_json(const json& j) {
    std::vector<Regime> out;
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "all") return {kAllRegimes.begin(), kAllRegimes.end()};
        out.push_back(parse_regime(s));
        return out;
    }
    if (!j.is_array()) fail(ErrorKind::invalid_argument, "regime must be a string or array");
    for (const auto& r : j) out.push_back(parse_regime(r.get<std::string>()));
    return out;
}

/// Full-coverage JSON form of a config. With `for_manifest`, keys that never
/// affect results (threads, cache and output locations) are left out.
inline json to_json(const RunConfig& c, bool for_manifest = false) {
    json j{
        {"support", {{"metadata", c.support.metadata}, {"descriptors", c.support.descriptors}}},
        {"query", {{"metadata", c.query.metadata}, {"descriptors", c.query.descriptors}}},
        {"cache_dir", c.cache_dir},
        {"out_dir", c.out_dir},
        {"graph", c.graph},
        {"smooth", {{"m", c.smooth.m}}},
        {"regime", regimes_to_json(c.regimes)},
        {"retrieval", c.retrieval},
        {"filter_radius_m", c.filter_radius_m},
        {"projection",
         {{"enabled", c.projection.enabled},
          {"d_out", c.projection.d_out},
          {"eps", c.projection.eps ? json(*c.projection.eps) : json(nullptr)},
          {"renormalize", c.projection.renormalize}}},
        {"sweep", {{"m_values", c.sweep_m_values}}},
        {"ablation", {{"regime", to_string(c.ablation_regime)}}},
        {"grid",
         {{"alphas", c.grid.alphas},
          {"betas", c.grid.betas},
          {"gammas", c.grid.gammas},
          {"max_distances_m", c.grid.max_distances_m},
          {"m_values", c.grid.m_values},
          {"regime", to_string(c.grid.regime)}}},
        {"seed", c.seed},
    };
    if (for_manifest) {
        j.erase("cache_dir");
        j.erase("out_dir");
    } else {
        j["threads"] = c.threads;
    }
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    static const std::set<std::string> kKeys{"support", "query", "cache_dir", "out_dir", "graph", "smooth",
                                             "regime", "retrieval", "filter_radius_m", "projection", "sweep",
                                             "ablation", "grid", "seed", "threads"};
    if (!j.is_object()) fail(ErrorKind::invalid_argument, "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!kKeys.count(key)) fail(ErrorKind::invalid_argument, "unknown config key '" + key + "'");
    }
    RunConfig c;
    try {
        if (j.contains("support")) {
            c.support.metadata = j["support"].value("metadata", "");
            c.support.descriptors = j["support"].value("descriptors", "");
        }
        if (j.contains("query")) {
            c.query.metadata = j["query"].value("metadata", "");
            c.query.descriptors = j["query"].value("descriptors", "");
        }
        c.cache_dir = j.value("cache_dir", c.cache_dir);
        c.out_dir = j.value("out_dir", c.out_dir);
        if (j.contains("graph")) c.graph = j["graph"].get<GraphParams>();
        if (j.contains("smooth")) c.smooth.m = j["smooth"].value("m", c.smooth.m);
        if (j.contains("regime")) c.regimes = regimes_from_json(j["regime"]);
        if (j.contains("retrieval")) c.retrieval = j["retrieval"].get<EvalOptions>();
        c.filter_radius_m = j.value("filter_radius_m", c.filter_radius_m);
        if (j.contains("projection")) {
            const auto& p = j["projection"];
            c.projection.enabled = p.value("enabled", c.projection.enabled);
            c.projection.d_out = p.value("d_out", c.projection.d_out);
            if (p.contains("eps") && !p["eps"].is_null()) c.projection.eps = p["eps"].get<double>();
            c.projection.renormalize = p.value("renormalize", c.projection.renormalize);
        }
        if (j.contains("sweep")) c.sweep_m_values = j["sweep"].value("m_values", c.sweep_m_values);
        if (j.contains("ablation")) {
            c.ablation_regime = parse_regime(j["ablation"].value("regime", std::string("gs_support")));
        }
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            c.grid.alphas = g.value("alphas", c.grid.alphas);
            c.grid.betas = g.value("betas", c.grid.betas);
            c.grid.gammas = g.value("gammas", c.grid.gammas);
            c.grid.max_distances_m = g.value("max_distances_m", c.grid.max_distances_m);
            c.grid.m_values = g.value("m_values", c.grid.m_values);
            c.grid.regime = parse_regime(g.value("regime", std::string("gs_support")));
        }
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Defaults, then the config file (if any), then `overrides`; later wins.
inline RunConfig load_run_config(const std::optional<fs::path>& path, const json& overrides = json::object()) {
    json merged = to_json(RunConfig{});
    if (path) {
        json file;
        try {
            file = json::parse(io::read_file(*path));
        } catch (const json::exception& e) {
            fail(ErrorKind::invalid_argument, path->string() + ": " + e.what());
        }
        merged.merge_patch(file);
    }
    merged.merge_patch(overrides);
    return run_config_from_json(merged);
}

inline json to_json(const SynthConfig& c) {
    return json{{"n_places", c.n_places},
                {"n_support_sequences", c.n_support_sequences},
                {"n_query_sequences", c.n_query_sequences},
                {"dim", c.dim},
                {"noise_sigma", c.noise_sigma},
                {"spacing_m", c.spacing_m},
                {"gps_jitter_m", c.gps_jitter_m},
                {"min_coverage", c.min_coverage},
                {"max_turn_deg", c.max_turn_deg},
                {"prototype_correlation", c.prototype_correlation},
                {"origin", {{"lat", c.origin.lat}, {"lon", c.origin.lon}}}};
}

inline SynthConfig synth_config_from_json(const json& j) {
    SynthConfig c;
    try {
        c.n_places = j.value("n_places", c.n_places);
        c.n_support_sequences = j.value("n_support_sequences", c.n_support_sequences);
        c.n_query_sequences = j.value("n_query_sequences", c.n_query_sequences);
        c.dim = j.value("dim", c.dim);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.spacing_m = j.value("spacing_m", c.spacing_m);
        c.gps_jitter_m = j.value("gps_jitter_m", c.gps_jitter_m);
        c.min_coverage = j.value("min_coverage", c.min_coverage);
        c.max_turn_deg = j.value("max_turn_deg", c.max_turn_deg);
        c.prototype_correlation = j.value("prototype_correlation", c.prototype_correlation);
        if (j.contains("origin")) {
            c.origin.lat = j["origin"].value("lat", c.origin.lat);
            c.origin.lon = j["origin"].value("lon", c.origin.lon);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- cache -----------------------------------------------------------------

/// Canonical key: nlohmann objects serialize with sorted keys.
inline std::string cache_key(const json& j) { return sha256_hex(j.dump()); }

class Cache {
public:
    explicit Cache(fs::path dir) : dir_(std::move(dir)) {}

    fs::path path(std::string_view kind, const std::string& key, std::string_view ext) const {
        return dir_ / kind / (key + "." + std::string(ext));
    }

    /// Returns the cached bytes for (kind, key), or computes, stores and
    /// returns them. Writes are atomic renames, so concurrent runs can share
    /// a cache directory.
    template <typename Compute>
    std::string bytes(std::string_view kind, const std::string& key, std::string_view ext,
                      Compute&& compute) {
        const auto p = path(kind, key, ext);
        if (fs::exists(p)) {
            ++hits_;
            return io::read_file(p);
        }
        ++misses_;
        std::string data = compute();
        io::write_file_atomic(p, data);
        return data;
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    fs::path dir_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

/// Exclusive ownership of an output directory for the lifetime of a run.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            fail(ErrorKind::io, "output directory '" + dir.string() +
                                    "' is locked by another run (remove " + path_.string() +
                                    " if stale)");
        }
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;
    ~OutputLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
    int fd_ = -1;
};

// ---- stages ----------------------------------------------------------------

struct Prepared {
    Dataset support;
    Dataset query;  // reachable queries only
    std::size_t queries_before_filter = 0;
    std::string support_records_key;
    std::string query_records_key;
    std::string support_desc_key;
    std::string query_desc_key;
    json inputs;  // path -> sha256
    json keys;    // stage -> cache key
};

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        fail(e.kind(), std::string(name) + ": " + e.what());
    }
}

inline void require_paths(const SplitPaths& p, const char* split) {
    if (p.metadata.empty() || p.descriptors.empty()) {
        fail(ErrorKind::invalid_argument, std::string(split) + " metadata and descriptor paths are required");
    }
}

inline std::string encode_indices(const std::vector<std::size_t>& idx) { return json(idx).dump() + "\n"; }

inline std::vector<std::size_t> decode_indices(const std::string& bytes) {
    return json::parse(bytes).get<std::vector<std::size_t>>();
}

}  // namespace detail

inline Prepared prepare(const RunConfig& config, Cache& cache, std::ostream& log) {
    detail::require_paths(config.support, "support");
    detail::require_paths(config.query, "query");
    Prepared out;

    const auto load_split = [&](const SplitPaths& paths, Role role, std::string& meta_hash,
                                std::string& desc_hash) {
        const auto meta_bytes = io::read_file(paths.metadata);
        const auto desc_bytes = io::read_file(paths.descriptors);
        meta_hash = sha256_hex(meta_bytes);
        desc_hash = sha256_hex(desc_bytes);
        auto records = parse_metadata(meta_bytes, paths.metadata);
        auto desc = decode_emb1(desc_bytes, paths.descriptors);
        if (desc.rows() != records.size()) {
            fail(ErrorKind::row_mismatch, paths.descriptors + ": descriptor file has " +
                                              std::to_string(desc.rows()) + " rows, metadata " +
                                              paths.metadata + " has " +
                                              std::to_string(records.size()) + " records");
        }
        return Dataset{std::move(records), std::move(desc), role};
    };

    std::string sm, sd, qm, qd;
    out.support = detail::stage("ingest", [&] { return load_split(config.support, Role::support, sm, sd); });
    Dataset query = detail::stage("ingest", [&] { return load_split(config.query, Role::query, qm, qd); });
    out.inputs = json{{config.support.metadata, sm},
                      {config.support.descriptors, sd},
                      {config.query.metadata, qm},
                      {config.query.descriptors, qd}};
    out.queries_before_filter = query.size();

    const std::string filter_key =
        cache_key({{"stage", "filter"}, {"support_metadata", sm}, {"query_metadata", qm},
                   {"radius_m", config.filter_radius_m}});
    const auto kept = detail::stage("filter", [&] {
        return detail::decode_indices(cache.bytes("filter", filter_key, "json", [&] {
            return detail::encode_indices(
                reachable_query_indices(query.records, out.support.records, config.filter_radius_m));
        }));
    });
    out.query = select_rows(query, kept);
    out.keys["filter"] = filter_key;
    log << "filter: kept " << out.query.size() << " of " << out.queries_before_filter
        << " queries within " << config.filter_radius_m << " m of the support set\n";

    out.support_records_key = sm;
    out.query_records_key = filter_key;
    out.support_desc_key = sd;
    out.query_desc_key = cache_key({{"stage", "select"}, {"descriptors", qd}, {"filter", filter_key}});

    if (config.projection.enabled) {
        const auto& ps = config.projection;
        const std::string proj_key =
            cache_key({{"stage", "projection"}, {"descriptors", sd}, {"d_out", ps.d_out},
                       {"eps", ps.eps ? json(*ps.eps) : json(nullptr)}});
        // Always use the stored (f32) form so fresh and cached runs agree.
        const Projection proj = detail::stage("projection", [&] {
            auto bytes = cache.bytes("projection", proj_key, "prj", [&] {
                return encode_prj1(fit_projection(out.support.descriptors, ps.d_out, ps.eps));
            });
            return decode_prj1(bytes, "projection cache");
        });
        out.keys["projection"] = proj_key;

        const auto project = [&](Dataset& d, std::string& desc_key, const char* name) {
            const std::string key = cache_key({{"stage", "projected"}, {"projection", proj_key},
                                               {"descriptors", desc_key}, {"renormalize", ps.renormalize}});
            auto bytes = cache.bytes("descriptors", key, "emb", [&] {
                auto y = apply_projection(proj, d.descriptors);
                if (ps.renormalize) {
                    auto n = l2_normalize(std::move(y));
                    if (n.zero_rows > 0) log << "warning: " << n.zero_rows << " zero rows after projection\n";
                    y = std::move(n.matrix);
                }
                return encode_emb1(y);
            });
            d.descriptors = decode_emb1(bytes, "projected descriptor cache");
            desc_key = key;
            out.keys[std::string("projected_") + name] = key;
        };
        detail::stage("projection", [&] {
            project(out.support, out.support_desc_key, "support");
            project(out.query, out.query_desc_key, "query");
            return 0;
        });
    }
    return out;
}

struct OperatorHandle {
    SmoothingOperator op;
    std::string key;
};

inline OperatorHandle cached_operator(Cache& cache, const Dataset& d, const std::string& records_key,
                                      const std::string& desc_key, const GraphParams& params) {
    const std::string key = cache_key({{"stage", "operator"}, {"records", records_key},
                                       {"descriptors", desc_key}, {"graph", params}});
    auto bytes = detail::stage("graph", [&] {
        return cache.bytes("operator", key, "adj", [&] {
            return encode_adj1(build_operator(d.records, d.descriptors, params));
        });
    });
    return {decode_adj1(bytes, "operator cache"), key};
}

inline std::pair<DescriptorMatrix, std::string> cached_smoothed(Cache& cache, const OperatorHandle& op,
                                                                const DescriptorMatrix& s,
                                                                const std::string& desc_key,
                                                                SmoothConfig cfg) {
    const std::string key = cache_key({{"stage", "smoothed"}, {"operator", op.key},
                                       {"descriptors", desc_key}, {"m", cfg.m}});
    auto bytes = detail::stage("smoothing", [&] {
        return cache.bytes("descriptors", key, "emb", [&] { return encode_emb1(smooth(op.op, s, cfg)); });
    });
    return {decode_emb1(bytes, "smoothed descriptor cache"), key};
}

/// Operators for both sides, built on first use.
class OperatorSet {
public:
    OperatorSet(Cache& cache, const Prepared& data, const RunConfig& config)
        : cache_(cache), data_(data), config_(config) {}

    const OperatorHandle& support(const GraphParams& params) {
        if (!support_ || support_params_ != params) {
            support_ = cached_operator(cache_, data_.support, data_.support_records_key,
                                       data_.support_desc_key, params);
            support_params_ = params;
        }
        return *support_;
    }

    const OperatorHandle& query(const GraphParams& params) {
        const auto qp = query_graph_params(params, config_.retrieval);
        if (!query_ || query_params_ != qp) {
            query_ = cached_operator(cache_, data_.query, data_.query_records_key, data_.query_desc_key, qp);
            query_params_ = qp;
        }
        return *query_;
    }

private:
    Cache& cache_;
    const Prepared& data_;
    const RunConfig& config_;
    std::optional<OperatorHandle> support_;
    std::optional<OperatorHandle> query_;
    GraphParams support_params_;
    GraphParams query_params_;
};

struct RegimeResult {
    EvalReport report;
    std::vector<Match> matches;
    json keys;
};

inline RegimeResult evaluate_cached(Cache& cache, OperatorSet& ops, const Prepared& data,
                                    const RunConfig& config, const GraphParams& params, SmoothConfig cfg,
                                    Regime regime) {
    RegimeResult result;
    std::optional<DescriptorMatrix> s_smoothed;
    std::optional<DescriptorMatrix> q_smoothed;
    if (smooths_support(regime) && cfg.m > 0) {
        const auto& op = ops.support(params);
        auto [m, key] = cached_smoothed(cache, op, data.support.descriptors, data.support_desc_key, cfg);
        s_smoothed = std::move(m);
        result.keys["support_operator"] = op.key;
        result.keys["support_smoothed"] = key;
    }
    if (smooths_query(regime) && cfg.m > 0) {
        const auto& op = ops.query(params);
        auto [m, key] = cached_smoothed(cache, op, data.query.descriptors, data.query_desc_key, cfg);
        q_smoothed = std::move(m);
        result.keys["query_operator"] = op.key;
        result.keys["query_smoothed"] = key;
    }
    auto outcome = detail::stage("retrieval", [&] {
        return retrieve_and_score(s_smoothed ? *s_smoothed : data.support.descriptors,
                                  q_smoothed ? *q_smoothed : data.query.descriptors, data.support.records,
                                  data.query.records, config.retrieval);
    });
    json snapshot = config_snapshot(params, cfg, regime, config.retrieval);
    snapshot["filter_radius_m"] = config.filter_radius_m;
    snapshot["projection"] = to_json(config, true)["projection"];
    if (regime == Regime::none) snapshot["effective_m"] = 0;
    result.report = make_report(std::move(outcome.errors), regime, config.retrieval, std::move(snapshot));
    result.matches = std::move(outcome.matches);
    return result;
}

// ---- commands --------------------------------------------------------------

inline void write_text(const fs::path& path, std::string_view text) { io::write_file_atomic(path, text); }

inline std::string splits_table(const std::vector<std::pair<std::string, SplitStats>>& splits) {
    std::size_t w = std::string("Split").size();
    for (const auto& [name, s] : splits) w = std::max(w, name.size());
    auto pad = [](std::string s, std::size_t width) { return s + std::string(width - std::min(width, s.size()), ' '); };
    std::string out = pad("Split", w) + " | # Sequences | # Images\n";
    out += std::string(w, '-') + "-+-------------+---------\n";
    for (const auto& [name, s] : splits) {
        out += pad(name, w) + " | " + pad(std::to_string(s.n_sequences), 11) + " | " +
               std::to_string(s.n_images) + "\n";
    }
    return out;
}

struct IngestSplit {
    std::string name;
    SplitPaths paths;
};

/// Validates each split and writes `dataset_manifest.json` to out_dir.
inline std::vector<std::pair<std::string, SplitStats>> cmd_ingest(std::span<const IngestSplit> splits,
                                                                  const fs::path& out_dir, std::ostream& out) {
    if (splits.empty()) fail(ErrorKind::invalid_argument, "ingest needs at least one split");
    std::vector<std::pair<std::string, SplitStats>> stats;
    json manifest{{"splits", json::array()}};
    for (const auto& s : splits) {
        detail::require_paths(s.paths, s.name.c_str());
        const auto meta_bytes = io::read_file(s.paths.metadata);
        const auto desc_bytes = io::read_file(s.paths.descriptors);
        const auto records = parse_metadata(meta_bytes, s.paths.metadata);
        const auto desc = decode_emb1(desc_bytes, s.paths.descriptors);
        if (desc.rows() != records.size()) {
            fail(ErrorKind::row_mismatch, s.name + ": metadata " + s.paths.metadata + " has " +
                                              std::to_string(records.size()) + " records but " +
                                              s.paths.descriptors + " has " + std::to_string(desc.rows()) +
                                              " descriptor rows");
        }
        const auto st = split_stats(records);
        stats.emplace_back(s.name, st);
        manifest["splits"].push_back({{"name", s.name},
                                      {"metadata", s.paths.metadata},
                                      {"descriptors", s.paths.descriptors},
                                      {"metadata_sha256", sha256_hex(meta_bytes)},
                                      {"descriptors_sha256", sha256_hex(desc_bytes)},
                                      {"n_sequences", st.n_sequences},
                                      {"n_images", st.n_images},
                                      {"dim", desc.dim()}});
    }
    write_text(out_dir / "dataset_manifest.json", manifest.dump(2) + "\n");
    out << splits_table(stats);
    return stats;
}

struct SynthOutputs {
    SplitPaths support;
    SplitPaths query;
    fs::path ground_truth;
};

/// Writes support/query metadata + EMB1 descriptors, ground truth and the
/// generator settings.
inline SynthOutputs cmd_synth(const SynthConfig& config, std::uint64_t seed, const fs::path& out_dir,
                              std::ostream& out) {
    const auto data = generate_synthetic(config, seed);
    fs::create_directories(out_dir);
    SynthOutputs paths{{(out_dir / "support.csv").string(), (out_dir / "support.emb").string()},
                       {(out_dir / "query.csv").string(), (out_dir / "query.emb").string()},
                       out_dir / "ground_truth.csv"};
    save_metadata(paths.support.metadata, data.support.records);
    save_descriptors(paths.support.descriptors, data.support.descriptors);
    save_metadata(paths.query.metadata, data.query.records);
    save_descriptors(paths.query.descriptors, data.query.descriptors);
    std::string gt = "image_id,place_index\n";
    for (const auto& [id, place] : data.ground_truth) gt += id + "," + std::to_string(place) + "\n";
    write_text(paths.ground_truth, gt);
    write_text(out_dir / "synth.json", json{{"config", to_json(config)}, {"seed", seed}}.dump(2) + "\n");
    out << "synth: wrote " << data.support.size() << " support and " << data.query.size()
        << " query images (" << config.n_places << " places, dim " << config.dim << ") to "
        << out_dir.string() << "\n";
    return paths;
}

struct RunOutcome {
    std::vector<EvalReport> reports;
    json manifest;
};

inline json base_manifest(const RunConfig& config, const Prepared& data, const char* command) {
    return json{{"command", command},
                {"config", to_json(config, true)},
                {"inputs", data.inputs},
                {"cache_keys", data.keys},
                {"n_support", data.support.size()},
                {"n_queries", data.query.size()},
                {"n_queries_before_filter", data.queries_before_filter}};
}

/// Full pipeline for each configured regime. Outputs per regime:
/// report_<regime>.json, errors_<regime>.csv, matches_<regime>.csv; plus
/// summary.csv, table.txt and manifest.json.
inline RunOutcome cmd_run(const RunConfig& config, std::ostream& log) {
    config.validate();
    const fs::path out_dir = config.out_dir;
    OutputLock lock(out_dir);
    Cache cache(config.cache_dir);
    const Prepared data = prepare(config, cache, log);
    OperatorSet ops(cache, data, config);

    RunOutcome outcome;
    outcome.manifest = base_manifest(config, data, "run");
    std::string summary = "regime,n_queries,median_error_m,acc_at_threshold,threshold_m\n";
    for (const auto regime : config.regimes) {
        if (regime == Regime::none && config.smooth.m > 0) {
            log << "warning: regime 'none' ignores m = " << config.smooth.m << "\n";
        }
        auto result = evaluate_cached(cache, ops, data, config, config.graph, config.smooth, regime);
        const std::string name = to_string(regime);
        write_text(out_dir / ("report_" + name + ".json"), report_to_json(result.report).dump(2) + "\n");
        write_text(out_dir / ("errors_" + name + ".csv"), format_errors_csv(result.report, data.query.records));
        write_text(out_dir / ("matches_" + name + ".csv"),
                   format_matches_csv(result.matches, data.query.records, data.support.records));
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%zu,%.6f,%.6f,%g\n", name.c_str(),
                      result.report.per_query_error_m.size(), result.report.median_error_m,
                      result.report.acc_at_threshold, result.report.threshold_m);
        summary += line;
        outcome.manifest["cache_keys"][name] = result.keys;
        outcome.reports.push_back(std::move(result.report));
    }
    const auto table = render_regime_table(outcome.reports);
    write_text(out_dir / "summary.csv", summary);
    write_text(out_dir / "table.txt", table);
    write_text(out_dir / "manifest.json", outcome.manifest.dump(2) + "\n");
    log << table;
    log << "cache: " << cache.hits() << " hits, " << cache.misses() << " misses\n";
    return outcome;
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& config, std::ostream& log) {
    config.validate();
    const fs::path out_dir = config.out_dir;
    OutputLock lock(out_dir);
    Cache cache(config.cache_dir);
    const Prepared data = prepare(config, cache, log);
    OperatorSet ops(cache, data, config);

    std::vector<AblationRow> rows;
    std::string plot = "row acc\n";
    for (const auto& subset : kAblationSubsets) {
        GraphParams p = config.graph;
        p.include_dist = subset[0];
        p.include_seq = subset[1];
        p.include_latent = subset[2];
        const auto r = evaluate_cached(cache, ops, data, config, p, config.smooth, config.ablation_regime);
        rows.push_back({subset[0], subset[1], subset[2], r.report.median_error_m, r.report.acc_at_threshold});
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu %.6f\n", rows.size() - 1, r.report.acc_at_threshold);
        plot += buf;
    }
    const auto csv = format_ablation_csv(rows);
    write_text(out_dir / "ablation.csv", csv);
    write_text(out_dir / "ablation.dat", plot);
    write_text(out_dir / "manifest.json", base_manifest(config, data, "ablate").dump(2) + "\n");
    log << csv;
    return rows;
}

inline std::vector<SweepRow> cmd_sweep_m(const RunConfig& config, std::ostream& log) {
    config.validate();
    const fs::path out_dir = config.out_dir;
    OutputLock lock(out_dir);
    Cache cache(config.cache_dir);
    const Prepared data = prepare(config, cache, log);
    OperatorSet ops(cache, data, config);

    std::vector<SweepRow> rows;
    for (unsigned m : config.sweep_m_values) {
        const auto r = evaluate_cached(cache, ops, data, config, config.graph, SmoothConfig{m}, Regime::gs_both);
        rows.push_back({m, r.report.acc_at_threshold, r.report.median_error_m});
    }
    const auto csv = format_sweep_csv(rows);
    write_text(out_dir / "sweep_m.csv", csv);
    write_text(out_dir / "sweep_m.dat", format_sweep_plot(rows));
    write_text(out_dir / "manifest.json", base_manifest(config, data, "sweep-m").dump(2) + "\n");
    log << csv;
    return rows;
}

inline ParameterGrid resolve_grid(const RunConfig& config) {
    ParameterGrid g;
    g.base = config.graph;
    g.alphas = config.grid.alphas.empty() ? std::vector<double>{config.graph.alpha} : config.grid.alphas;
    g.beta_sets = config.grid.betas.empty() ? std::vector<std::vector<double>>{config.graph.betas}
                                            : config.grid.betas;
    g.gammas = config.grid.gammas.empty() ? std::vector<double>{config.graph.gamma} : config.grid.gammas;
    g.max_distances_m = config.grid.max_distances_m.empty() ? std::vector<double>{config.graph.max_distance_m}
                                                            : config.grid.max_distances_m;
    g.m_values = config.grid.m_values.empty() ? std::vector<unsigned>{config.smooth.m} : config.grid.m_values;
    return g;
}

/// The query split of `config` is the validation query.
inline GridResult cmd_gridsearch(const RunConfig& config, std::ostream& log) {
    config.validate();
    const fs::path out_dir = config.out_dir;
    OutputLock lock(out_dir);
    Cache cache(config.cache_dir);
    const Prepared data = prepare(config, cache, log);
    OperatorSet ops(cache, data, config);
    const ParameterGrid grid = resolve_grid(config);

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
                    for (unsigned m : grid.m_values) {
                        const auto r = evaluate_cached(cache, ops, data, config, p, SmoothConfig{m}, config.grid.regime);
                        result.table.push_back({index++, p, SmoothConfig{m}, r.report.acc_at_threshold,
                                                r.report.median_error_m});
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

    const std::string params_line = format_parameters(result.best_params, result.best_cfg);
    write_text(out_dir / "gridsearch.csv", format_grid_csv(result.table));
    write_text(out_dir / "best_params.txt", params_line + "\n");
    auto manifest = base_manifest(config, data, "gridsearch");
    manifest["best_index"] = result.best_index;
    manifest["best"] = {{"graph", result.best_params}, {"smooth", {{"m", result.best_cfg.m}}}};
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    log << "gridsearch: " << result.table.size() << " cells, best #" << result.best_index << " acc "
        << format_percent(best.acc_at_threshold) << " median " << format_meters(best.median_error_m) << "\n";
    log << params_line << "\n";
    return result;
}

}  // namespace gsloc::pipeline
