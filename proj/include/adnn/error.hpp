#pragma once

#include <stdexcept>
#include <string>

namespace adnn {

/// Base error for everything raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input from the caller: malformed files, invalid configuration,
/// requests the data cannot satisfy. The CLI maps these to exit code 1.
class UserError : public Error {
 public:
  using Error::Error;
};

/// A cross-section with fewer than two usable stocks.
class DegenerateCrossSection : public UserError {
 public:
  using UserError::UserError;
};

}  // namespace adnn
