#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brainloop {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  numeric,
  not_found,
  io,
  bad_magic,
  version_mismatch,
  truncated_payload,
  non_finite_value,
  config,
  disconnected,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::truncated_payload: return "truncated_payload";
    case ErrorKind::non_finite_value: return "non_finite_value";
    case ErrorKind::config: return "config";
    case ErrorKind::disconnected: return "disconnected";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace brainloop
