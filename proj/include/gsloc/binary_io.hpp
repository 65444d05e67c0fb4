#pragma once

// Little-endian byte buffers and whole-file helpers shared by the EMB1, PRJ1
// and ADJ1 containers.

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>

#include "gsloc/errors.hpp"

namespace gsloc::io {

class ByteWriter {
public:
    void magic(std::string_view tag) { buffer_.append(tag); }

    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    void reserve(std::size_t n) { buffer_.reserve(n); }
    const std::string& bytes() const& { return buffer_; }
    std::string bytes() && { return std::move(buffer_); }

private:
    template <typename U>
    void put_le(U v) {
        char out[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
        }
        buffer_.append(out, sizeof(U));
    }

    std::string buffer_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}

    void expect_magic(std::string_view tag) {
        if (bytes_.size() < tag.size() || bytes_.substr(0, tag.size()) != tag) {
            fail(ErrorKind::bad_magic,
                 context_ + ": bad magic, expected '" + std::string(tag) + "'");
        }
        pos_ = tag.size();
    }

    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void require(std::size_t n, const char* what) const {
        if (remaining() < n) {
            fail(ErrorKind::truncated, context_ + ": truncated " + what + " (need " +
                                           std::to_string(n) + " bytes, have " +
                                           std::to_string(remaining()) + ")");
        }
    }

    void expect_end() const {
        if (remaining() != 0) {
            fail(ErrorKind::trailing_data,
                 context_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
        }
    }

    const std::string& context() const { return context_; }

private:
    template <typename U>
    U get_le() {
        require(sizeof(U), "field");
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    std::string_view bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorKind::io, "error reading '" + path.string() + "'");
    return bytes;
}

/// Writes through a uniquely named sibling file and renames it into place, so
/// concurrent readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, "cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorKind::io, "error writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        fail(ErrorKind::io, "cannot rename into '" + path.string() + "': " + ec.message());
    }
}

}  // namespace gsloc::io
