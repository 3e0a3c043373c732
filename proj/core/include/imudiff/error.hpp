#pragma once

#include <stdexcept>
#include <string>

namespace imudiff {

enum class ErrorKind {
  insufficient_data,
  insufficient_span,
  parse,
  format,
  degenerate_channel,
  config,
  contract,
  io,
  numerical,
};

const char* to_string(ErrorKind kind) noexcept;

// All library failures are reported through this exception type. The kind
// drives CLI exit codes (config/parse/contract -> 2, io -> 3, numerical -> 4).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace imudiff
