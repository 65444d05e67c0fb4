#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gsloc/dataset.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/geodesy.hpp"

namespace gsloc {

/// Desk-scale stand-in for a street-level image collection: places along a
/// meandering road, sequences driving contiguous stretches of it, and one
/// noisy descriptor per visit.
struct SynthConfig {
    std::size_t n_places = 50;
    std::size_t n_support_sequences = 20;
    std::size_t n_query_sequences = 5;
    std::size_t dim = 64;
    /// Per-component standard deviation of the additive Gaussian noise.
    double noise_sigma = 0.8;
    double spacing_m = 10.0;
    double gps_jitter_m = 2.0;
    /// Each sequence covers a random contiguous run of at least this fraction
    /// of the places.
    double min_coverage = 0.5;
    /// Max heading change between consecutive road segments, degrees.
    double max_turn_deg = 10.0;
    /// Correlation between consecutive places' prototypes before
    /// normalization (nearby places share landmarks); 0 = independent.
    double prototype_correlation = 0.0;
    GeoPoint origin{-34.9285, 138.6007};

    void validate() const {
        if (n_places == 0 || n_support_sequences == 0 || n_query_sequences == 0 || dim == 0) {
            fail(ErrorKind::invalid_argument, "synthetic counts and dim must be positive");
        }
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
            fail(ErrorKind::invalid_argument, "noise sigma must be nonnegative");
        }
        if (!(spacing_m > 0.0)) fail(ErrorKind::invalid_argument, "place spacing must be positive");
        if (!(gps_jitter_m >= 0.0)) fail(ErrorKind::invalid_argument, "GPS jitter must be nonnegative");
        if (!(min_coverage > 0.0 && min_coverage <= 1.0)) {
            fail(ErrorKind::invalid_argument, "min_coverage must be in (0, 1]");
        }
        if (!(prototype_correlation >= 0.0 && prototype_correlation < 1.0)) {
            fail(ErrorKind::invalid_argument, "prototype correlation must be in [0, 1)");
        }
        if (!GeoPoint::valid(origin.lat, origin.lon)) fail(ErrorKind::out_of_range, "bad origin");
    }
};

/// Settings used by the statistical acceptance runs: baseline top-1 accuracy
/// lands near 40% and neighbouring places share landmarks.
inline SynthConfig calibrated_synth_config() {
    SynthConfig c;
    c.noise_sigma = 0.3;
    c.prototype_correlation = 0.9;
    return c;
}

struct SyntheticData {
    Dataset support;
    Dataset query;
    std::map<std::string, std::size_t> ground_truth;  // image_id -> place index
    std::vector<GeoPoint> places;
    DescriptorMatrixD prototypes;  // unit rows, one per place
};

inline SyntheticData generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticData out;

    double east = 0.0;
    double north = 0.0;
    double heading = 2.0 * std::numbers::pi * unit(rng);
    const double max_turn = deg_to_rad(config.max_turn_deg);
    out.places.reserve(config.n_places);
    for (std::size_t p = 0; p < config.n_places; ++p) {
        out.places.push_back(offset_m(config.origin, east, north));
        heading += max_turn * (2.0 * unit(rng) - 1.0);
        east += config.spacing_m * std::cos(heading);
        north += config.spacing_m * std::sin(heading);
    }

    // AR(1) walk along the road, each step normalized to a unit prototype.
    out.prototypes = DescriptorMatrixD(config.n_places, config.dim);
    const double rho = config.prototype_correlation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    std::vector<double> state(config.dim, 0.0);
    for (std::size_t p = 0; p < config.n_places; ++p) {
        double sq = 0.0;
        do {
            sq = 0.0;
            for (double& v : state) {
                v = (p == 0 ? 0.0 : rho * v) + (p == 0 ? 1.0 : innovation) * gauss(rng);
                sq += v * v;
            }
        } while (sq == 0.0);
        const double inv = 1.0 / std::sqrt(sq);
        auto row = out.prototypes.row(p);
        for (std::size_t c = 0; c < config.dim; ++c) row[c] = state[c] * inv;
        // Keep the walk at unit scale so rho means the same at every step.
        const double scale = std::sqrt(static_cast<double>(config.dim)) * inv;
        for (double& v : state) v *= scale;
    }

    const double noise_std = config.noise_sigma;
    const std::size_t min_len = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.min_coverage * static_cast<double>(config.n_places))));

    auto make_split = [&](Role role, std::size_t n_sequences) {
        std::vector<ImageRecord> records;
        std::vector<float> values;
        const char prefix = role == Role::support ? 's' : 'q';
        for (std::size_t s = 0; s < n_sequences; ++s) {
            std::uniform_int_distribution<std::size_t> len_dist(min_len, config.n_places);
            const std::size_t len = len_dist(rng);
            std::uniform_int_distribution<std::size_t> start_dist(0, config.n_places - len);
            const std::size_t start = start_dist(rng);
            const bool reverse = unit(rng) < 0.5;
            char seq_id[32];
            std::snprintf(seq_id, sizeof(seq_id), "%c%03zu", prefix, s);
            for (std::size_t f = 0; f < len; ++f) {
                const std::size_t place = reverse ? start + len - 1 - f : start + f;
                char image_id[64];
                std::snprintf(image_id, sizeof(image_id), "%s_%05zu", seq_id, f);
                const auto fix = offset_m(out.places[place], config.gps_jitter_m * gauss(rng),
                                          config.gps_jitter_m * gauss(rng));
                records.push_back({image_id, seq_id, static_cast<std::uint32_t>(f), fix.lat, fix.lon});
                out.ground_truth[image_id] = place;

                const auto proto = out.prototypes.row(place);
                if (config.noise_sigma == 0.0) {
                    for (double v : proto) values.push_back(static_cast<float>(v));
                    continue;
                }
                std::vector<double> x(proto.begin(), proto.end());
                double sq = 0.0;
                for (double& v : x) {
                    v += noise_std * gauss(rng);
                    sq += v * v;
                }
                const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
                for (double v : x) values.push_back(static_cast<float>(v * inv));
            }
        }
        const std::size_t rows = records.size();
        return make_dataset(std::move(records), DescriptorMatrix(rows, config.dim, std::move(values)), role);
    };

    out.support = make_split(Role::support, config.n_support_sequences);
    out.query = make_split(Role::query, config.n_query_sequences);
    validate_records(out.support.records);
    validate_records(out.query.records);
    return out;
}

}  // namespace gsloc
