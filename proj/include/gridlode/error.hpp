#pragma once

#include <stdexcept>
#include <string>

namespace gridlode {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

/// Input outside the mathematical domain of an operation (e.g. log of a
/// non-positive value).
struct DomainError : Error {
    using Error::Error;
};

/// A precondition of an API call was violated.
struct ContractError : Error {
    using Error::Error;
};

/// Adaptive integration failed (non-finite state or step budget exhausted).
struct IntegrationError : Error {
    IntegrationError(const std::string& what, double t, double h)
        : Error(what), time(t), step(h) {}
    double time = 0.0;
    double step = 0.0;
};

/// Malformed input file; line is 1-based, 0 when not line-addressable.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line_no = 0)
        : Error(what), line(line_no) {}
    std::size_t line = 0;
};

/// Filesystem-level failure (unreadable/unwritable path).
struct IoError : Error {
    using Error::Error;
};

}  // namespace gridlode
