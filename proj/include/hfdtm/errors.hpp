#pragma once

#include <stdexcept>
#include <string>

namespace hfdtm {

/// Bad input: malformed files, inconsistent shapes, invalid configuration.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure at run time (non-finite loss or gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hfdtm
