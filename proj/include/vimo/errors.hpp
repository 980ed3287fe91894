#pragma once

#include <stdexcept>
#include <string>

namespace vimo {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad inputs: malformed files, degenerate data, violated preconditions.
/// CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown during processing (non-finite cost, failed solve).
/// CLI maps these to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace vimo
