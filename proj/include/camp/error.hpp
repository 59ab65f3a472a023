#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace camp {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent tensor or layer dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Precondition violated by the caller (bad argument, missing state).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a degenerate numeric situation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Power iteration produced a (near-)zero Hessian-vector product.
class DegenerateCurvatureError : public NumericError {
 public:
  DegenerateCurvatureError(std::size_t iteration, double norm)
      : NumericError("degenerate curvature: Hessian-vector product norm " + std::to_string(norm) +
                     " at power iteration " + std::to_string(iteration)),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File was readable but its content is malformed (bad magic, truncated data).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace camp
