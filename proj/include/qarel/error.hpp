#pragma once

#include <stdexcept>
#include <string>

namespace qarel {

// Exception families. The CLI maps each family onto a distinct exit code.

/// Invalid argument or configuration supplied by the caller (exit 1).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data, or an I/O failure (exit 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch, non-finite value, or undefined quantity (exit 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qarel
