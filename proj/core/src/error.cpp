#include "imudiff/error.hpp"

namespace imudiff {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::insufficient_span: return "insufficient-span";
    case ErrorKind::parse: return "parse";
    case ErrorKind::format: return "format";
    case ErrorKind::degenerate_channel: return "degenerate-channel";
    case ErrorKind::config: return "config";
    case ErrorKind::contract: return "contract";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace imudiff
