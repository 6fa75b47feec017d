#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace amortsens {

/// Caller passed arguments that violate an operation's contract.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Persisted artifact failed an integrity check (hash, schema, dimensions).
class DataIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values appeared in a computation that requires finite ones.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward simulation produced an invalid state.
class SimulationError : public NumericError {
 public:
  SimulationError(const std::string& what, std::size_t step)
      : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace amortsens
