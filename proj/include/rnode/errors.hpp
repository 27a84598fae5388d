#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rnode {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A call violated an operation's contract (bad argument, missing state).
struct ContractError : Error {
  using Error::Error;
};

// Operand shapes do not conform.
struct ShapeError : Error {
  using Error::Error;
};

// Interval end precedes its start.
struct TimeOrderError : ContractError {
  using ContractError::ContractError;
};

// Malformed input text; carries the 1-based line number when known.
struct ParseError : Error {
  explicit ParseError(const std::string& msg, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg),
        line_number(line) {}
  std::size_t line_number;
};

// Structurally valid input that breaks a dataset invariant.
struct ValidationError : Error {
  using Error::Error;
};

// Bad or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Numerical failure: non-finite values, divergence, solver non-convergence.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace rnode
