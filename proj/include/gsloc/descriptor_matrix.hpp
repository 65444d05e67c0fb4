#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gsloc/binary_io.hpp"
#include "gsloc/errors.hpp"

namespace gsloc {

/// Dense row-major descriptor store; row i is the signal at image i.
template <typename T>
class BasicDescriptorMatrix {
public:
    using value_type = T;

    BasicDescriptorMatrix() = default;

    BasicDescriptorMatrix(std::size_t rows, std::size_t dim)
        : rows_(rows), dim_(dim), data_(rows * dim, T{0}) {}

    BasicDescriptorMatrix(std::size_t rows, std::size_t dim, std::vector<T> data)
        : rows_(rows), dim_(dim), data_(std::move(data)) {
        if (data_.size() != rows_ * dim_) {
            fail(ErrorKind::size_mismatch, "descriptor data has " + std::to_string(data_.size()) +
                                               " values, expected " +
                                               std::to_string(rows_ * dim_));
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t dim() const { return dim_; }
    bool empty() const { return rows_ == 0; }

    std::span<const T> data() const { return data_; }
    std::span<T> data() { return data_; }

    std::span<const T> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<T> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

    template <typename U>
    BasicDescriptorMatrix<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return BasicDescriptorMatrix<U>(rows_, dim_, std::move(out));
    }

    /// New matrix holding the given rows, in the given order.
    BasicDescriptorMatrix select_rows(std::span<const std::size_t> indices) const {
        BasicDescriptorMatrix out(indices.size(), dim_);
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto src = row(indices[r]);
            std::copy(src.begin(), src.end(), out.row(r).begin());
        }
        return out;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const BasicDescriptorMatrix&, const BasicDescriptorMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<T> data_;
};

using DescriptorMatrix = BasicDescriptorMatrix<float>;
using DescriptorMatrixD = BasicDescriptorMatrix<double>;

// EMB1: "EMB1", u32 rows, u32 dim, rows*dim f32 row-major, little-endian.

inline std::string encode_emb1(const DescriptorMatrix& m) {
    if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
        m.dim() > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorKind::invalid_argument, "descriptor matrix too large for EMB1");
    }
    io::ByteWriter w;
    w.reserve(12 + 4 * m.data().size());
    w.magic("EMB1");
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.dim()));
    for (float v : m.data()) w.f32(v);
    return std::move(w).bytes();
}

inline DescriptorMatrix decode_emb1(std::string_view bytes, const std::string& context) {
    io::ByteReader r(bytes, context);
    r.require(4, "header");
    r.expect_magic("EMB1");
    r.require(8, "header");
    const std::uint64_t rows = r.u32();
    const std::uint64_t dim = r.u32();
    const std::uint64_t count = rows * dim;
    if (r.remaining() < count * 4) {
        fail(ErrorKind::truncated, context + ": truncated payload, header declares " +
                                       std::to_string(rows) + "x" + std::to_string(dim) + " = " +
                                       std::to_string(count) + " floats but only " +
                                       std::to_string(r.remaining() / 4) + " present");
    }
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        data[i] = r.f32();
        if (!std::isfinite(data[i])) {
            fail(ErrorKind::non_finite, context + ": non-finite value at row " +
                                            std::to_string(i / dim) + ", column " +
                                            std::to_string(i % dim));
        }
    }
    r.expect_end();
    return DescriptorMatrix(rows, dim, std::move(data));
}

inline void save_descriptors(const std::filesystem::path& path, const DescriptorMatrix& m) {
    io::write_file_atomic(path, encode_emb1(m));
}

inline DescriptorMatrix read_descriptors(const std::filesystem::path& path) {
    return decode_emb1(io::read_file(path), path.string());
}

/// Loads an EMB1 file and checks it against the metadata row count.
inline DescriptorMatrix load_descriptors(const std::filesystem::path& path,
                                         std::size_t expected_rows) {
    auto m = read_descriptors(path);
    if (m.rows() != expected_rows) {
        fail(ErrorKind::row_mismatch, path.string() + ": descriptor file has " +
                                          std::to_string(m.rows()) + " rows, metadata has " +
                                          std::to_string(expected_rows) + " records");
    }
    return m;
}

}  // namespace gsloc
