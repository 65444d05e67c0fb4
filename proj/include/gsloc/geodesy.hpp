#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gsloc/errors.hpp"

namespace gsloc {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoPoint {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees

    static bool valid(double lat, double lon) {
        return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
               lon >= -180.0 && lon <= 180.0;
    }

    static GeoPoint checked(double lat, double lon) {
        if (!valid(lat, lon)) {
            fail(ErrorKind::out_of_range, "coordinate (" + std::to_string(lat) + ", " +
                                              std::to_string(lon) + ") out of range");
        }
        return {lat, lon};
    }

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Spherical great-circle distance in meters.
inline double haversine_m(GeoPoint a, GeoPoint b) {
    const double phi1 = deg_to_rad(a.lat);
    const double phi2 = deg_to_rad(b.lat);
    // abs() keeps the result bitwise symmetric in (a, b).
    const double half_dphi = 0.5 * std::abs(phi2 - phi1);
    const double half_dlambda = 0.5 * std::abs(deg_to_rad(b.lon) - deg_to_rad(a.lon));
    const double s1 = std::sin(half_dphi);
    const double s2 = std::sin(half_dlambda);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

/// Offsets a point by local east/north displacements in meters
/// (equirectangular, valid at city scale).
inline GeoPoint offset_m(GeoPoint origin, double east_m, double north_m) {
    const double lat = origin.lat + rad_to_deg(north_m / kEarthRadiusM);
    const double lon =
        origin.lon + rad_to_deg(east_m / (kEarthRadiusM * std::cos(deg_to_rad(origin.lat))));
    return {lat, lon};
}

/// Uniform lat/lon bucket grid. Any two points closer than `cell_m` along the
/// great circle land in the same or adjacent cells (longitude wraps), so a
/// 3x3 neighborhood scan finds every pair under the cutoff.
class SpatialGrid {
public:
    /// `max_abs_lat` widens the longitude cells so that external probe points
    /// up to that latitude are also covered; it is raised to the indexed
    /// points' own maximum.
    SpatialGrid(std::span<const GeoPoint> points, double cell_m, double max_abs_lat = 0.0)
        : points_(points.begin(), points.end()) {
        if (!(cell_m > 0.0) || !std::isfinite(cell_m)) {
            fail(ErrorKind::invalid_argument, "spatial grid cell size must be positive");
        }
        for (const auto& p : points_) max_abs_lat = std::max(max_abs_lat, std::abs(p.lat));

        constexpr double kSlack = 1.0 + 1e-9;
        const double ang = cell_m / kEarthRadiusM * kSlack;
        lat_width_ = std::min(ang, std::numbers::pi);
        n_lat_ = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::floor(std::numbers::pi / lat_width_)));
        lat_width_ = std::numbers::pi / static_cast<double>(n_lat_);

        // hav(dlambda) <= hav(d / R) / (cos(phi1) cos(phi2))
        const double cmin = std::cos(deg_to_rad(std::min(90.0, max_abs_lat)));
        const double hs = std::sin(0.5 * ang);
        const double ratio = cmin > 0.0 ? (hs * hs) / (cmin * cmin) : 2.0;
        const double lon_width = ratio >= 1.0 ? 2.0 * std::numbers::pi
                                              : 2.0 * std::asin(std::sqrt(ratio)) * kSlack;
        n_lon_ = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::floor(2.0 * std::numbers::pi / lon_width)));
        lon_width_ = 2.0 * std::numbers::pi / static_cast<double>(n_lon_);

        for (std::uint32_t i = 0; i < points_.size(); ++i) {
            const auto [iy, ix] = cell_of(points_[i]);
            buckets_[key(iy, ix)].push_back(i);
        }
    }

    std::size_t size() const { return points_.size(); }
    const GeoPoint& point(std::size_t i) const { return points_[i]; }

    /// Calls f(index) for every indexed point in the 3x3 cell neighborhood of q.
    template <typename F>
    void for_each_candidate(GeoPoint q, F&& f) const {
        const auto [iy, ix] = cell_of(q);
        std::int64_t xs[3];
        int nx = 0;
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const std::int64_t x = ((ix + dx) % n_lon_ + n_lon_) % n_lon_;
            if (std::find(xs, xs + nx, x) == xs + nx) xs[nx++] = x;
        }
        for (std::int64_t y = iy - 1; y <= iy + 1; ++y) {
            if (y < 0 || y >= n_lat_) continue;
            for (int c = 0; c < nx; ++c) {
                const auto it = buckets_.find(key(y, xs[c]));
                if (it == buckets_.end()) continue;
                for (std::uint32_t idx : it->second) f(idx);
            }
        }
    }

private:
    std::pair<std::int64_t, std::int64_t> cell_of(GeoPoint p) const {
        const double phi = deg_to_rad(p.lat) + 0.5 * std::numbers::pi;
        const double lambda = deg_to_rad(p.lon) + std::numbers::pi;
        auto iy = static_cast<std::int64_t>(std::floor(phi / lat_width_));
        auto ix = static_cast<std::int64_t>(std::floor(lambda / lon_width_));
        iy = std::clamp<std::int64_t>(iy, 0, n_lat_ - 1);
        ix = ((ix % n_lon_) + n_lon_) % n_lon_;
        return {iy, ix};
    }

    std::int64_t key(std::int64_t iy, std::int64_t ix) const { return iy * n_lon_ + ix; }

    std::vector<GeoPoint> points_;
    double lat_width_ = 0.0;
    double lon_width_ = 0.0;
    std::int64_t n_lat_ = 1;
    std::int64_t n_lon_ = 1;
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets_;
};

}  // namespace gsloc
