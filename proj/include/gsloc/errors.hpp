#pragma once

#include <stdexcept>
#include <string>

namespace gsloc {

enum class ErrorKind {
    invalid_argument,
    malformed_row,
    duplicate_id,
    out_of_range,
    bad_magic,
    truncated,
    trailing_data,
    row_mismatch,
    non_finite,
    size_mismatch,
    io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::malformed_row: return "malformed_row";
        case ErrorKind::duplicate_id: return "duplicate_id";
        case ErrorKind::out_of_range: return "out_of_range";
        case ErrorKind::bad_magic: return "bad_magic";
        case ErrorKind::truncated: return "truncated";
        case ErrorKind::trailing_data: return "trailing_data";
        case ErrorKind::row_mismatch: return "row_mismatch";
        case ErrorKind::non_finite: return "non_finite";
        case ErrorKind::size_mismatch: return "size_mismatch";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// Input or usage error raised by the library. Anything else escaping a
/// function is an internal failure.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace gsloc
