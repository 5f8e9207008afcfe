#pragma once

#include <stdexcept>
#include <string>

namespace spff {

// Base for every error the engine raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A domain type was constructed with a violated invariant.
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Bad user configuration (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Episode sampling could not be satisfied by the dataset.
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Loss became non-finite during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  io,
  bad_magic,
  unsupported_version,
  truncated,
  shape_mismatch,
  trailing_bytes,
  invalid_content,
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::unsupported_version: return "unsupported_version";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::shape_mismatch: return "shape_mismatch";
    case FormatErrorKind::trailing_bytes: return "trailing_bytes";
    case FormatErrorKind::invalid_content: return "invalid_content";
  }
  return "unknown";
}

// Reading or writing an on-disk artifact failed.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace spff
