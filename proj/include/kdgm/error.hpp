#pragma once

#include <stdexcept>
#include <string>

namespace kdgm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A query or sample lies outside the domain a model was trained on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or missing field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corrupted, truncated or incompatible model file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Model file written by an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace kdgm
