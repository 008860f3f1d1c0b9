#pragma once

#include <stdexcept>
#include <string>

namespace qaf {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes between operands.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument values (non-finite inputs, out-of-range indices, ...).
struct ValueError : Error {
    using Error::Error;
};

// Malformed or truncated files.
struct FormatError : Error {
    using Error::Error;
};

// Non-finite intermediates, divergence, failed numerical checks.
struct NumericError : Error {
    using Error::Error;
};

// Unknown config keys, invalid config values, bad command usage.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace qaf
