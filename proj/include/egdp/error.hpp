#pragma once

#include <stdexcept>
#include <string>

namespace egdp {

// Base for every error raised by the library. The CLI maps ConfigError to
// exit status 2 and everything else to 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DegenerateDualError : public InputError {
 public:
  using InputError::InputError;
};

// Checkpoint corruption / mismatch. `offset` is the byte position at which
// the problem was detected (0 when not applicable).
class LoadError : public Error {
 public:
  LoadError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace egdp
