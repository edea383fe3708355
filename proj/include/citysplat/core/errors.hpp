#pragma once

#include <stdexcept>
#include <string>

namespace citysplat {

/// Raised when a caller hands in a value outside an operation's domain
/// (non-finite parameters, out-of-range indices, bad configuration values).
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated input file.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric procedure could not produce a meaningful answer
/// (degenerate fit, degenerate scene, non-finite loss).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace citysplat
