#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace posr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not conform to an operation's contract.
class ConformanceError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required, or numerically invalid input.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a precondition that is not about shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss). The message carries batch diagnostics.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace posr
