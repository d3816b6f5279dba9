#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pearl {

// Exit-code contract of the CLI: 1 usage, 2 data, 3 numerical.
enum class ErrorKind { usage = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

/// Cholesky / incomplete factorization hit a nonpositive or zero pivot.
class FactorizationError : public NumericalError {
 public:
  FactorizationError(const std::string& what, std::size_t pivot)
      : NumericalError(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// NaN/Inf encountered inside an iterative solver.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : NumericalError(what + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// PCG detected p'z <= 0, i.e. the preconditioner is not SPD.
class PreconditionerInvalidError : public NumericalError {
 public:
  PreconditionerInvalidError(const std::string& what, std::size_t iteration)
      : NumericalError(what + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::size_t iterations)
      : NumericalError(what + " after " + std::to_string(iterations) + " iterations"),
        iterations_(iterations) {}
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

}  // namespace pearl
