#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace accept {

enum class ErrorKind {
  config,
  diverged,
  out_of_range,
  parse,
  validation,
  fit_failed,
  bank_generation,
  corrupt_bank,
  degenerate_embedding,
  contract,
  stale_cache,
  empty_input,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::fit_failed: return "fit_failed";
    case ErrorKind::bank_generation: return "bank_generation";
    case ErrorKind::corrupt_bank: return "corrupt_bank";
    case ErrorKind::degenerate_embedding: return "degenerate_embedding";
    case ErrorKind::contract: return "contract";
    case ErrorKind::stale_cache: return "stale_cache";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` is the machine-readable
/// category the CLI reports.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace accept
