#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tqd {

/// Base of every error raised by the library. The CLI maps each subclass to
/// a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, undefined statistics, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Degenerate value range, e.g. y_max == y_min.
class RangeError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Optimization produced non-finite gradients or loss.
class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the byte offset at which parsing stopped.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace tqd
