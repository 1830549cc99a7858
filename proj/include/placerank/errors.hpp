#pragma once

#include <stdexcept>
#include <string>

namespace placerank {

/// Raised when inputs violate a documented precondition or invariant
/// (dimension mismatches, non-finite values, out-of-range parameters).
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a file cannot be read, written, or parsed at the envelope
/// level (missing path, bad magic, truncation, malformed document).
/// The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace placerank
