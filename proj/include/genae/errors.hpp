#pragma once

#include <stdexcept>
#include <string>

namespace genae {

// Exit codes surfaced by the command-line tool. Library errors carry one so the
// CLI can map exceptions without string matching.
enum class ErrorCode : int {
  ok = 0,
  usage = 2,
  format = 3,
  numeric = 4,
  incompatible = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Malformed, truncated or unsupported files.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCode::format, what) {}
};

// NaN/Inf in a loss or a tensor that must be finite.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCode::numeric, what) {}
};

// Checkpoint or container that does not match the requested configuration.
class IncompatibleError : public Error {
 public:
  explicit IncompatibleError(const std::string& what) : Error(ErrorCode::incompatible, what) {}
};

// Invalid model/loss/STFT configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::usage, what) {}
};

}  // namespace genae
