#pragma once

#include <stdexcept>
#include <string>

namespace stochattn {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A scalar argument is outside its admissible range (temperature <= 0, rate >= 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Precondition of an operation violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace stochattn
