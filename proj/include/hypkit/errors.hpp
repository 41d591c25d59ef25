#pragma once

#include <stdexcept>
#include <string>

namespace hypkit {

enum class ErrorKind {
  shape,
  usage,
  state,
  format,
  io,
  spec,
  data,
  config,
  degenerate,
  design,
  numerical,
  undefined_metric,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define HYPKIT_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

HYPKIT_DEFINE_ERROR(ShapeError, shape)
HYPKIT_DEFINE_ERROR(UsageError, usage)
HYPKIT_DEFINE_ERROR(StateError, state)
HYPKIT_DEFINE_ERROR(FormatError, format)
HYPKIT_DEFINE_ERROR(IoError, io)
HYPKIT_DEFINE_ERROR(SpecError, spec)
HYPKIT_DEFINE_ERROR(DataError, data)
HYPKIT_DEFINE_ERROR(ConfigError, config)
HYPKIT_DEFINE_ERROR(DegenerateError, degenerate)
HYPKIT_DEFINE_ERROR(DesignError, design)
HYPKIT_DEFINE_ERROR(NumericalError, numerical)
HYPKIT_DEFINE_ERROR(UndefinedMetricError, undefined_metric)

#undef HYPKIT_DEFINE_ERROR

// Process exit status for an error category: 1 configuration/usage,
// 2 data/format/io, 3 numerical failure.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace hypkit
