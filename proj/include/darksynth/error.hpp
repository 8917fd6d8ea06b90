#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace darksynth {

enum class ErrorKind {
    InvalidInput,
    Io,
    Compatibility,
    Validation,
    Numerical,
    EmptySet,
    Divergence,
};

std::string_view to_string(ErrorKind kind);

/// Base exception for every failure raised by the library. The kind is the
/// machine-readable category surfaced by the CLI and the service.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error invalid_input(const std::string& msg) { return {ErrorKind::InvalidInput, msg}; }
inline Error io_error(const std::string& msg) { return {ErrorKind::Io, msg}; }
inline Error compatibility_error(const std::string& msg) { return {ErrorKind::Compatibility, msg}; }
inline Error validation_error(const std::string& msg) { return {ErrorKind::Validation, msg}; }
inline Error numerical_error(const std::string& msg) { return {ErrorKind::Numerical, msg}; }

}  // namespace darksynth
