#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace eta {

/// Root of every error raised by the library. The three direct subclasses
/// map onto the CLI exit codes (usage = 2, data = 3, numeric = 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class NotAdjacent : public DataError {
 public:
  using DataError::DataError;
};

class NonPositiveLabel : public DataError {
 public:
  using DataError::DataError;
};

class LengthMismatch : public DataError {
 public:
  using DataError::DataError;
};

class ShapeMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonFiniteValue : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(std::uint64_t step, const std::string& what)
      : NumericError("non-finite loss at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

}  // namespace eta
