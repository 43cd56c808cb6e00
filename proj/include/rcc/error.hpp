#pragma once

#include <stdexcept>
#include <string>

namespace rcc {

enum class ErrorKind {
  InvalidInput,
  Configuration,
  Io,
  Transport,
  Permanent,
  Parse,
  NoApplicableError,
  UndefinedCorrelation,
  Invariant,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Io: return "io";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Permanent: return "permanent";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::NoApplicableError: return "no-applicable-error";
    case ErrorKind::UndefinedCorrelation: return "undefined-correlation";
    case ErrorKind::Invariant: return "invariant";
  }
  return "unknown";
}

/// Single exception type for the toolkit; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::InvalidInput, message);
}

}  // namespace rcc
