#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gsloc/binary_io.hpp"
#include "gsloc/descriptor_matrix.hpp"
#include "gsloc/errors.hpp"
#include "gsloc/geodesy.hpp"

namespace gsloc {

struct ImageRecord {
    std::string image_id;
    std::string sequence_id;
    std::uint32_t frame_index = 0;
    double lat = 0.0;
    double lon = 0.0;

    GeoPoint position() const { return {lat, lon}; }

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

enum class Role { support, query };

inline const char* to_string(Role role) { return role == Role::support ? "support" : "query"; }

struct Dataset {
    std::vector<ImageRecord> records;
    DescriptorMatrix descriptors;
    Role role = Role::support;

    std::size_t size() const { return records.size(); }
};

struct SplitStats {
    std::size_t n_sequences = 0;
    std::size_t n_images = 0;
};

inline constexpr std::string_view kMetadataHeader = "image_id,sequence_id,frame_index,lat,lon";

/// Checks id uniqueness, coordinate ranges, and per-sequence frame ordering.
inline void validate_records(const std::vector<ImageRecord>& records) {
    std::unordered_set<std::string_view> ids;
    std::unordered_map<std::string_view, std::uint32_t> last_frame;
    ids.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.image_id.empty()) fail(ErrorKind::malformed_row, "record " + std::to_string(i) + ": empty image_id");
        if (!ids.insert(r.image_id).second) {
            fail(ErrorKind::duplicate_id, "duplicate image_id '" + r.image_id + "'");
        }
        if (!GeoPoint::valid(r.lat, r.lon)) {
            fail(ErrorKind::out_of_range, "image '" + r.image_id + "': coordinate out of range");
        }
        auto [it, fresh] = last_frame.try_emplace(r.sequence_id, r.frame_index);
        if (!fresh) {
            if (r.frame_index == it->second) {
                fail(ErrorKind::duplicate_id, "sequence '" + r.sequence_id + "': frame_index " +
                                                  std::to_string(r.frame_index) + " repeated");
            }
            if (r.frame_index < it->second) {
                fail(ErrorKind::malformed_row,
                     "sequence '" + r.sequence_id + "': frame_index " +
                         std::to_string(r.frame_index) + " listed after " +
                         std::to_string(it->second));
            }
            it->second = r.frame_index;
        }
    }
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

template <typename V>
bool parse_number(std::string_view text, V& out) {
    if (text.empty()) return false;
    // from_chars rejects a leading '+', which is fine for this format.
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline std::vector<ImageRecord> parse_metadata(std::string_view text, const std::string& context) {
    std::vector<ImageRecord> records;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool saw_header = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!saw_header) {
            if (line != kMetadataHeader) {
                fail(ErrorKind::malformed_row, context + ":1: expected header '" +
                                                   std::string(kMetadataHeader) + "'");
            }
            saw_header = true;
            continue;
        }
        if (line.empty()) continue;

        const auto where = context + ":" + std::to_string(line_no);
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 5) {
            fail(ErrorKind::malformed_row, where + ": expected 5 fields, found " +
                                               std::to_string(fields.size()));
        }
        ImageRecord r;
        r.image_id = std::string(fields[0]);
        r.sequence_id = std::string(fields[1]);
        if (r.image_id.empty()) fail(ErrorKind::malformed_row, where + ": empty image_id");
        if (!detail::parse_number(fields[2], r.frame_index)) {
            fail(ErrorKind::malformed_row, where + ": bad frame_index '" + std::string(fields[2]) + "'");
        }
        if (!detail::parse_number(fields[3], r.lat) || !detail::parse_number(fields[4], r.lon)) {
            fail(ErrorKind::malformed_row, where + ": unparsable coordinate");
        }
        if (!GeoPoint::valid(r.lat, r.lon)) {
            fail(ErrorKind::out_of_range, where + ": coordinate (" + std::string(fields[3]) + ", " +
                                              std::string(fields[4]) + ") out of range");
        }
        records.push_back(std::move(r));
    }
    if (!saw_header) fail(ErrorKind::malformed_row, context + ": missing header");
    try {
        validate_records(records);
    } catch (const Error& e) {
        fail(e.kind(), context + ": " + e.what());
    }
    return records;
}

inline std::vector<ImageRecord> load_metadata(const std::filesystem::path& path) {
    return parse_metadata(io::read_file(path), path.string());
}

inline std::string format_metadata(const std::vector<ImageRecord>& records) {
    std::string out(kMetadataHeader);
    out += '\n';
    for (const auto& r : records) {
        out += r.image_id;
        out += ',';
        out += r.sequence_id;
        out += ',';
        out += std::to_string(r.frame_index);
        out += ',';
        out += detail::format_double(r.lat);
        out += ',';
        out += detail::format_double(r.lon);
        out += '\n';
    }
    return out;
}

inline void save_metadata(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
    io::write_file_atomic(path, format_metadata(records));
}

inline Dataset make_dataset(std::vector<ImageRecord> records, DescriptorMatrix descriptors, Role role) {
    if (records.size() != descriptors.rows()) {
        fail(ErrorKind::row_mismatch, "metadata has " + std::to_string(records.size()) +
                                          " records, descriptors have " +
                                          std::to_string(descriptors.rows()) + " rows");
    }
    return Dataset{std::move(records), std::move(descriptors), role};
}

inline Dataset load_dataset(const std::filesystem::path& metadata_path,
                            const std::filesystem::path& descriptor_path, Role role) {
    auto records = load_metadata(metadata_path);
    auto descriptors = load_descriptors(descriptor_path, records.size());
    return Dataset{std::move(records), std::move(descriptors), role};
}

inline SplitStats split_stats(const std::vector<ImageRecord>& records) {
    std::set<std::string_view> sequences;
    for (const auto& r : records) sequences.insert(r.sequence_id);
    return {sequences.size(), records.size()};
}

/// Indices of query records within `radius_m` (inclusive) of some support record.
inline std::vector<std::size_t> reachable_query_indices(const std::vector<ImageRecord>& query,
                                                        const std::vector<ImageRecord>& support,
                                                        double radius_m) {
    if (!(radius_m > 0.0)) fail(ErrorKind::invalid_argument, "filter radius must be positive");
    if (support.empty()) {
        fail(ErrorKind::invalid_argument, "cannot filter queries against an empty support set");
    }
    std::vector<GeoPoint> support_pts;
    support_pts.reserve(support.size());
    double max_abs_lat = 0.0;
    for (const auto& r : support) support_pts.push_back(r.position());
    for (const auto& r : query) max_abs_lat = std::max(max_abs_lat, std::abs(r.lat));
    const SpatialGrid grid(support_pts, radius_m, max_abs_lat);

    std::vector<std::size_t> kept;
    for (std::size_t q = 0; q < query.size(); ++q) {
        const auto p = query[q].position();
        bool reachable = false;
        grid.for_each_candidate(p, [&](std::uint32_t s) {
            if (!reachable && haversine_m(p, grid.point(s)) <= radius_m) reachable = true;
        });
        if (reachable) kept.push_back(q);
    }
    return kept;
}

inline Dataset select_rows(const Dataset& d, std::span<const std::size_t> indices) {
    Dataset out;
    out.role = d.role;
    out.records.reserve(indices.size());
    for (auto i : indices) out.records.push_back(d.records[i]);
    out.descriptors = d.descriptors.select_rows(indices);
    return out;
}

inline Dataset filter_reachable_queries(const Dataset& query, const Dataset& support, double radius_m = 25.0) {
    const auto kept = reachable_query_indices(query.records, support.records, radius_m);
    return select_rows(query, kept);
}

}  // namespace gsloc
