#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace neurodyn {

// Every throwing path in the library uses one of these so callers (and the
// CLI exit-code mapping) can tell usage mistakes from runtime failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/vector shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Math domain violation (log/sqrt of negative, non-finite op output).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied argument outside its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// API contract violation (e.g. backward from a non-scalar root).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Optimization failed (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Simulated trajectory left the finite domain; carries the offending step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, int64_t step)
      : Error(msg + " at step " + std::to_string(step)), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

// Input admits no meaningful answer (zero variance, zero power, empty result).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// File could not be read, written, or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace neurodyn
