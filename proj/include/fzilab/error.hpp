#pragma once

#include <stdexcept>
#include <string>

namespace fzilab {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument value (counts, ranges, probabilities).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Dimension or grid mismatch between objects that must agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values encountered during a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Requested decomposition is not a valid probability split.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// A brute-force enumeration would exceed its size guard.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace fzilab
