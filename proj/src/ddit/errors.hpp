#pragma once

#include <stdexcept>
#include <string>

namespace ddit {

/// Failure categories surfaced by the core. The C API maps these onto
/// status codes, and the CLI maps those onto process exit codes.
enum class ErrorKind {
  config,   // invalid configuration or hyperparameter
  shape,    // tensor shape / layout mismatch
  input,    // invalid caller-supplied data
  usage,    // operation called in the wrong mode (e.g. objective mismatch)
  numeric,  // NaN / Inf encountered
  io,       // persistence failure
  state,    // inconsistent internal state (e.g. EMA name mismatch)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace ddit
