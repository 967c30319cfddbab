#pragma once

#include <stdexcept>
#include <string>

namespace asrtra {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's precondition (bad text, empty input, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Object used in a state that does not permit the operation.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration value. `field()` names the key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// File could not be opened, read, or written, or has a malformed layout.
class FileError : public Error {
 public:
  using Error::Error;
};

}  // namespace asrtra
