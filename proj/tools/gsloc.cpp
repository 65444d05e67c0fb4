// gsloc: command-line front end for the graph-smoothing localization pipeline.
//
// Exit status: 0 on success, 2 on invalid input or configuration, 1 on any
// other failure.

#include <omp.h>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsloc/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using gsloc::pipeline::json;

struct GlobalFlags {
    std::string config;
    std::string cache_dir;
    std::string out_dir;
    int threads = 0;
    std::uint64_t seed = 0;
};

// Flags shared by commands that execute the pipeline. Only flags the user
// actually supplied end up in the overlay.
struct PipelineFlags {
    std::string support_metadata, support_descriptors, query_metadata, query_descriptors;
    std::string regime;
    unsigned m = 0;
    double alpha = 0, gamma = 0, max_distance = 0, threshold = 0, filter_radius = 0;
    std::vector<double> betas;
    std::size_t k = 0, d_out = 0;
    std::string strategy;
    bool query_gps = false, no_dist = false, no_seq = false, no_latent = false, self_edges = false;
    bool project = false;
    std::vector<unsigned> m_values;

    std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> setters;

    template <typename T>
    void add(CLI::App* app, const std::string& name, T& target, const std::string& help,
             std::function<void(json&, const T&)> apply) {
        auto* opt = app->add_option(name, target, help);
        setters.emplace_back(opt, [&target, apply](json& j) { apply(j, target); });
    }

    void add_flag(CLI::App* app, const std::string& name, bool& target, const std::string& help,
                  std::function<void(json&)> apply) {
        auto* opt = app->add_flag(name, target, help);
        setters.emplace_back(opt, std::move(apply));
    }

    void attach(CLI::App* app) {
        add<std::string>(app, "--support-metadata", support_metadata, "support metadata CSV",
                         [](json& j, const std::string& v) { j["support"]["metadata"] = v; });
        add<std::string>(app, "--support-descriptors", support_descriptors, "support EMB1 descriptors",
                         [](json& j, const std::string& v) { j["support"]["descriptors"] = v; });
        add<std::string>(app, "--query-metadata", query_metadata, "query metadata CSV",
                         [](json& j, const std::string& v) { j["query"]["metadata"] = v; });
        add<std::string>(app, "--query-descriptors", query_descriptors, "query EMB1 descriptors",
                         [](json& j, const std::string& v) { j["query"]["descriptors"] = v; });
        add<std::string>(app, "--regime", regime, "none, gs_support, gs_query, gs_both or all",
                         [](json& j, const std::string& v) { j["regime"] = v; });
        add<unsigned>(app, "--m", m, "smoothing steps", [](json& j, const unsigned& v) { j["smooth"]["m"] = v; });
        add<double>(app, "--alpha", alpha, "distance kernel rate per meter",
                    [](json& j, const double& v) { j["graph"]["alpha"] = v; });
        add<std::vector<double>>(app, "--betas", betas, "sequence weights for gaps 1..k_max",
                                 [](json& j, const std::vector<double>& v) {
                                     j["graph"]["betas"] = v;
                                     j["graph"]["k_max"] = v.size();
                                 });
        add<double>(app, "--gamma", gamma, "latent kernel weight",
                    [](json& j, const double& v) { j["graph"]["gamma"] = v; });
        add<double>(app, "--max-distance", max_distance, "distance kernel cutoff in meters",
                    [](json& j, const double& v) { j["graph"]["max_distance_m"] = v; });
        add_flag(app, "--no-dist", no_dist, "disable the distance kernel",
                 [](json& j) { j["graph"]["include_dist"] = false; });
        add_flag(app, "--no-seq", no_seq, "disable the sequence kernel",
                 [](json& j) { j["graph"]["include_seq"] = false; });
        add_flag(app, "--no-latent", no_latent, "disable the latent kernel",
                 [](json& j) { j["graph"]["include_latent"] = false; });
        add_flag(app, "--self-edges", self_edges, "add unit self-loops before normalizing",
                 [](json& j) { j["graph"]["include_self_edges"] = true; });
        add<std::size_t>(app, "--k", k, "neighbors per query",
                         [](json& j, const std::size_t& v) { j["retrieval"]["k"] = v; });
        add<std::string>(app, "--strategy", strategy, "top1 or weighted_topk",
                         [](json& j, const std::string& v) { j["retrieval"]["strategy"] = v; });
        add<double>(app, "--threshold", threshold, "accuracy threshold in meters",
                    [](json& j, const double& v) { j["retrieval"]["threshold_m"] = v; });
        add_flag(app, "--query-gps", query_gps, "use query GPS in the query graph",
                 [](json& j) { j["retrieval"]["query_gps"] = true; });
        add<double>(app, "--filter-radius", filter_radius, "drop queries farther than this from any support image",
                    [](json& j, const double& v) { j["filter_radius_m"] = v; });
        add_flag(app, "--project", project, "PCA-whiten descriptors fitted on the support split",
                 [](json& j) { j["projection"]["enabled"] = true; });
        add<std::size_t>(app, "--d-out", d_out, "projection output dimension",
                         [](json& j, const std::size_t& v) { j["projection"]["d_out"] = v; });
        add<std::vector<unsigned>>(app, "--m-values", m_values, "m values for sweep-m / gridsearch",
                                   [](json& j, const std::vector<unsigned>& v) {
                                       j["sweep"]["m_values"] = v;
                                       j["grid"]["m_values"] = v;
                                   });
    }

    void apply(json& overlay) const {
        for (const auto& [opt, set] : setters) {
            if (opt->count() > 0) set(overlay);
        }
    }
};

json global_overlay(const GlobalFlags& g, CLI::App& app) {
    json j = json::object();
    if (app.get_option("--cache-dir")->count() > 0) j["cache_dir"] = g.cache_dir;
    if (app.get_option("--out-dir")->count() > 0) j["out_dir"] = g.out_dir;
    if (app.get_option("--threads")->count() > 0) j["threads"] = g.threads;
    if (app.get_option("--seed")->count() > 0) j["seed"] = g.seed;
    return j;
}

std::vector<gsloc::pipeline::IngestSplit> parse_splits(const std::vector<std::string>& specs) {
    std::vector<gsloc::pipeline::IngestSplit> out;
    for (const auto& s : specs) {
        const auto a = s.find(':');
        const auto b = a == std::string::npos ? a : s.find(':', a + 1);
        if (b == std::string::npos) {
            gsloc::fail(gsloc::ErrorKind::invalid_argument, "--split expects NAME:METADATA:DESCRIPTORS, got '" + s + "'");
        }
        out.push_back({s.substr(0, a), {s.substr(a + 1, b - a - 1), s.substr(b + 1)}});
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-smoothing visual localization: ingest, synthesize, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags g;
    app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--cache-dir", g.cache_dir, "cache directory");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--threads", g.threads, "worker threads (0 = all)")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", g.seed, "random seed");

    auto* ingest = app.add_subcommand("ingest", "validate splits and print their sizes");
    std::vector<std::string> split_specs;
    ingest->add_option("--split", split_specs, "NAME:METADATA:DESCRIPTORS (repeatable)");

    auto* synth = app.add_subcommand("synth", "write a synthetic support/query dataset");
    gsloc::SynthConfig sc;
    std::string preset = "default";
    synth->add_option("--preset", preset, "default or calibrated")
        ->check(CLI::IsMember({"default", "calibrated"}));
    std::size_t n_places = 0, n_support = 0, n_query = 0, dim = 0;
    double sigma = 0, spacing = 0, jitter = 0, rho = 0;
    auto* o_places = synth->add_option("--places", n_places, "number of places");
    auto* o_support = synth->add_option("--support-sequences", n_support, "support sequences");
    auto* o_query = synth->add_option("--query-sequences", n_query, "query sequences");
    auto* o_dim = synth->add_option("--dim", dim, "descriptor dimension");
    auto* o_sigma = synth->add_option("--sigma", sigma, "per-component descriptor noise");
    auto* o_spacing = synth->add_option("--spacing", spacing, "place spacing in meters");
    auto* o_jitter = synth->add_option("--gps-jitter", jitter, "GPS noise in meters");
    auto* o_rho = synth->add_option("--correlation", rho, "correlation of neighboring prototypes");

    PipelineFlags pf_run, pf_ablate, pf_sweep, pf_grid;
    auto* run = app.add_subcommand("run", "evaluate one or more regimes");
    pf_run.attach(run);
    auto* ablate = app.add_subcommand("ablate", "evaluate all kernel subsets");
    pf_ablate.attach(ablate);
    auto* sweep = app.add_subcommand("sweep-m", "accuracy as a function of m");
    pf_sweep.attach(sweep);
    auto* grid = app.add_subcommand("gridsearch", "exhaustive parameter search on the query split");
    pf_grid.attach(grid);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.get_option("--threads")->count() > 0 && g.threads > 0) omp_set_num_threads(g.threads);
        const std::optional<fs::path> config_path =
            g.config.empty() ? std::nullopt : std::optional<fs::path>(g.config);

        if (*synth) {
            if (preset == "calibrated") sc = gsloc::calibrated_synth_config();
            if (o_places->count()) sc.n_places = n_places;
            if (o_support->count()) sc.n_support_sequences = n_support;
            if (o_query->count()) sc.n_query_sequences = n_query;
            if (o_dim->count()) sc.dim = dim;
            if (o_sigma->count()) sc.noise_sigma = sigma;
            if (o_spacing->count()) sc.spacing_m = spacing;
            if (o_jitter->count()) sc.gps_jitter_m = jitter;
            if (o_rho->count()) sc.prototype_correlation = rho;
            const fs::path out = g.out_dir.empty() ? fs::path("synth") : fs::path(g.out_dir);
            gsloc::pipeline::cmd_synth(sc, g.seed, out, std::cout);
            return 0;
        }

        if (*ingest) {
            const auto config = gsloc::pipeline::load_run_config(config_path, global_overlay(g, app));
            std::vector<gsloc::pipeline::IngestSplit> splits = parse_splits(split_specs);
            if (splits.empty()) {
                splits.push_back({"support", config.support});
                splits.push_back({"query", config.query});
            }
            gsloc::pipeline::cmd_ingest(splits, config.out_dir, std::cout);
            return 0;
        }

        const auto load = [&](const PipelineFlags& pf) {
            json overlay = global_overlay(g, app);
            pf.apply(overlay);
            auto config = gsloc::pipeline::load_run_config(config_path, overlay);
            if (config.threads > 0) omp_set_num_threads(config.threads);
            return config;
        };
        if (*run) {
            gsloc::pipeline::cmd_run(load(pf_run), std::cerr);
        } else if (*ablate) {
            gsloc::pipeline::cmd_ablate(load(pf_ablate), std::cerr);
        } else if (*sweep) {
            gsloc::pipeline::cmd_sweep_m(load(pf_sweep), std::cerr);
        } else if (*grid) {
            gsloc::pipeline::cmd_gridsearch(load(pf_grid), std::cerr);
        }
        return 0;
    } catch (const gsloc::Error& e) {
        std::cerr << "error [" << gsloc::to_string(e.kind()) << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
