#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace wavecc {

/// Coarse error category. The CLI maps each kind onto a process exit code.
enum class ErrorKind {
  kUsage,    // bad arguments, invalid configuration
  kIo,       // file missing, unreadable, unwritable
  kFormat,   // malformed container, bitstream or image
  kDigest,   // bitstream produced with different weights
  kShape,    // tensor shape mismatch
  kNumeric,  // NaN/Inf or domain violation
  kState,    // operation called out of order (e.g. coding order violated)
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kDigest: return "digest";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace wavecc
