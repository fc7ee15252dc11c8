#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alignlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (exit code 2 at the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input violates an operation precondition (e.g. uncentered columns).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (zero variance, zero bandwidth, ...).
class DegenerateMetricError : public Error {
 public:
  using Error::Error;
};

class InvertibilityError : public Error {
 public:
  using Error::Error;
};

/// Correlation of a constant series.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class DivergedTrainingError : public Error {
 public:
  DivergedTrainingError(std::size_t epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

class UnknownFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace alignlab
