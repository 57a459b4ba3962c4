#pragma once

#include <stdexcept>
#include <string>

namespace loopynet {

enum class ErrorKind {
  io,
  parse,
  schema,
  range,
  config,
  bounds,
  state,
  shape,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::schema: return "schema";
    case ErrorKind::range: return "range";
    case ErrorKind::config: return "config";
    case ErrorKind::bounds: return "bounds";
    case ErrorKind::state: return "state";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so the CLI can map it to
/// an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 0 success, 2 usage/config/parse, 3 shape/state, 4 numeric failure.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape:
    case ErrorKind::state:
      return 3;
    case ErrorKind::numeric:
      return 4;
    default:
      return 2;
  }
}

}  // namespace loopynet
