#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cnflow {

// Common base so callers can catch any toolkit error in one handler and map
// it to a stable process exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  // Stable identifier used by the CLI for exit codes and error reporting.
  virtual const char* kind() const noexcept { return "Error"; }
  virtual int exit_code() const noexcept { return 1; }
};

#define CNFLOW_DEFINE_ERROR(NAME, CODE)                              \
  class NAME : public Error {                                        \
   public:                                                           \
    explicit NAME(const std::string& msg) : Error(msg) {}            \
    const char* kind() const noexcept override { return #NAME; }     \
    int exit_code() const noexcept override { return CODE; }         \
  }

CNFLOW_DEFINE_ERROR(CyclicGraphError, 10);
CNFLOW_DEFINE_ERROR(ShapeError, 11);
CNFLOW_DEFINE_ERROR(CyclicBlockError, 12);
CNFLOW_DEFINE_ERROR(UnknownSCMError, 13);
CNFLOW_DEFINE_ERROR(DomainError, 14);
CNFLOW_DEFINE_ERROR(ConfigError, 15);
CNFLOW_DEFINE_ERROR(NonFiniteError, 16);
CNFLOW_DEFINE_ERROR(NonConvergenceError, 17);
CNFLOW_DEFINE_ERROR(FormatError, 18);
CNFLOW_DEFINE_ERROR(VersionError, 19);
CNFLOW_DEFINE_ERROR(ChecksumError, 20);
CNFLOW_DEFINE_ERROR(MissingColumnError, 21);
CNFLOW_DEFINE_ERROR(DegenerateLabelsError, 22);
CNFLOW_DEFINE_ERROR(IOError, 23);

#undef CNFLOW_DEFINE_ERROR

// Non-fatal diagnostics (e.g. an intervention value far outside the range
// seen in training data). Collected instead of thrown.
struct Warning {
  std::string kind;
  std::string message;
};

using WarningList = std::vector<Warning>;

inline void warn(WarningList* sink, std::string kind, std::string message) {
  if (sink != nullptr) sink->push_back({std::move(kind), std::move(message)});
}

}  // namespace cnflow
