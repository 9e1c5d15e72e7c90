#pragma once

#include <stdexcept>
#include <string>

namespace barcnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array shapes or configuration dimensions that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or invalid input files.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace barcnn
