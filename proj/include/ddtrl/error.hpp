#pragma once

#include <stdexcept>
#include <string>

namespace ddtrl {

// Base for every error raised by the library. The CLI maps each subclass to
// its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid tree/config/arguments, including input shape mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or corrupted persisted data (IDX, model JSON, dataset container).
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity showed up where a finite number is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddtrl
