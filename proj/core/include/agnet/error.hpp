#pragma once

#include <stdexcept>
#include <string>

namespace agnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit an operation's contract.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration or command-line usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, truncated or inconsistent files and datasets.
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered during optimization.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace agnet
