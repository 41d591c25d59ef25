#include "hypkit/errors.hpp"

namespace hypkit {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::state: return "state error";
    case ErrorKind::format: return "format error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::spec: return "spec error";
    case ErrorKind::data: return "data error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::degenerate: return "degenerate data";
    case ErrorKind::design: return "design error";
    case ErrorKind::numerical: return "numerical failure";
    case ErrorKind::undefined_metric: return "undefined metric";
  }
  return "error";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
    case ErrorKind::spec:
    case ErrorKind::design:
    case ErrorKind::state:
      return 1;
    case ErrorKind::shape:
    case ErrorKind::format:
    case ErrorKind::io:
    case ErrorKind::data:
    case ErrorKind::undefined_metric:
      return 2;
    case ErrorKind::degenerate:
    case ErrorKind::numerical:
      return 3;
  }
  return 1;
}

}  // namespace hypkit
