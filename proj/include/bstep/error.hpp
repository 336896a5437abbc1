#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bstep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed expression text; carries the byte offset of the offending token.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Division by zero, 0^negative and similar domain failures during evaluation.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Plant data violating hyperbolicity or structural assumptions.
class PlantError : public Error {
 public:
  using Error::Error;
};

/// Configuration problems; the message names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key + ": " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Numerical failure: non-convergence, blow-up, CFL violation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Fixed-point iteration that ran out of sweeps.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : NumericalError(what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// A broken internal invariant (e.g. a characteristic leaving through a boundary without data).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace bstep
