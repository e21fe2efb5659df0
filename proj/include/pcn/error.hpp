#pragma once

#include <stdexcept>
#include <string>

namespace pcn {

enum class ErrorKind {
  shape,
  out_of_bounds,
  invalid_argument,
  insufficient_data,
  format,
  io,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::out_of_bounds: return "oob";
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::insufficient_data: return "insufficient data";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, detail);
}

}  // namespace pcn
