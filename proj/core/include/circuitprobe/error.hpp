#pragma once

#include <stdexcept>
#include <string>

namespace circuitprobe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is missing, truncated or malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Inputs are well-formed but violate a precondition of the requested operation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace circuitprobe
