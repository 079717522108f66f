#pragma once

#include <stdexcept>
#include <string>

namespace continuum {

/// Operand shapes do not agree (matrix/model/batch/parameter vector).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric result left the finite range (diverged training, bad input).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment / pipeline / job configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport failure or misuse of a message bus.
class BusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace continuum
