#pragma once

#include <stdexcept>
#include <string>

namespace freqadapt {

// Base for every error raised by the library. CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind { bad_magic, bad_version, truncated, non_finite, bad_header };

inline const char* to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::bad_magic: return "bad magic";
    case FormatErrorKind::bad_version: return "unsupported version";
    case FormatErrorKind::truncated: return "truncated payload";
    case FormatErrorKind::non_finite: return "non-finite value";
    case FormatErrorKind::bad_header: return "malformed header";
  }
  return "unknown";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& where)
      : Error(std::string(to_string(kind)) + ": " + where), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

// Raised when an inverse transform leaves more imaginary residue than the
// input spectrum allows.
class NumericConsistencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Scheduler used out of order (resolve without a pending probe, etc).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Target labels touched while the unsupervised guard is armed.
class LabelAccessError : public Error {
 public:
  using Error::Error;
};

}  // namespace freqadapt
