#pragma once

#include <stdexcept>
#include <string>

namespace nmer {

enum class ErrorKind {
  invalid_argument,
  io,
  format,
  shape_mismatch,
  non_finite,
  divergence,
  config,
};

const char* to_string(ErrorKind kind);

/// Library-wide exception. `kind` is stable and machine-readable; the CLI
/// maps it to its one-line error output.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace nmer
