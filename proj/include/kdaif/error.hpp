#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kdaif {

// Every failure the library reports derives from Error so callers (the CLI in
// particular) can map it to a stable machine-readable kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Bad shapes, out-of-range arguments, malformed files.
class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input"; }
};

// Non-finite values produced during a computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, int layer = -1)
      : Error(what), layer_(layer) {}
  const char* kind() const noexcept override { return "numeric"; }
  // Layer holding the offending coordinate, -1 when not attributable.
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

// Training loss exceeded the divergence threshold.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
  const char* kind() const noexcept override { return "divergence"; }
};

class CapacityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "capacity"; }
};

// Iterative solver failure; carries the last residual norm.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, std::size_t iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}
  const char* kind() const noexcept override { return "solver"; }
  double residual() const noexcept { return residual_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  std::size_t iterations_;
};

}  // namespace kdaif
