#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnlab {

enum class ErrorKind {
  dimension,
  state,
  degenerate_input,
  range,
  config,
  input,
  format,
  compatibility,
  domain,
  parameter,
  data,
  numeric,
  usage,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; `kind` drives the CLI
// exit code and the error JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string context = {})
      : std::runtime_error(message), kind_(kind), context_(std::move(context)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorKind kind_;
  std::string context_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message, std::string context = {}) {
  throw Error(kind, message, std::move(context));
}

}  // namespace attnlab
