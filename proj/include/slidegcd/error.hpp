#pragma once

#include <stdexcept>
#include <string>

namespace slidegcd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid scalar parameter (temperature, k, eps, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed bag/checkpoint/manifest bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (e.g. buffer not full).
class StateError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses/gradients during optimisation.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

}  // namespace slidegcd
