#pragma once

#include <stdexcept>
#include <string>

namespace snerf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (dimension mismatches, bad schedules).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument is outside the accepted range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A point was passed to a function outside of its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity surfaced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, Corrupt, VersionMismatch, Incompatible };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace snerf
