#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lddmm {

/// Root of every error the toolkit throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operands disagree on grid or tensor shape.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input data is malformed (e.g. non-finite coordinates).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A configuration value is outside its admissible range.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// An API was called out of order (e.g. backward before forward).
class UsageError : public Error {
public:
    using Error::Error;
};

/// A metric has no defined value for the given inputs.
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A file could not be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Synthetic data generation could not satisfy its constraints.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// A numerical integration or optimization produced non-finite values.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::ptrdiff_t step = -1)
        : Error(what), step_(step) {}

    /// Integration step at which the blow-up was detected, or -1 if unknown.
    std::ptrdiff_t step() const noexcept { return step_; }

private:
    std::ptrdiff_t step_;
};

}  // namespace lddmm
