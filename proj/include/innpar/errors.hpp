#pragma once

#include <stdexcept>
#include <string>

namespace innpar {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between operands; message names the offending axes.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite values, singular matrices, division by zero.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file contents (bad magic, truncation, ragged CSV rows).
struct FormatError : Error {
    using Error::Error;
};

// API misuse (empty inputs, non-scalar loss terminal).
struct UsageError : Error {
    using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem problems (missing path, unwritable directory).
struct IoError : Error {
    using Error::Error;
};

} // namespace innpar
