#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mimlab {

inline constexpr std::string_view kVersion = "mimlab 0.1.0";

// Error taxonomy. The CLI maps kinds to process exit codes:
// Config -> 2, Data/Io/Capacity -> 3, Numeric -> 4, everything else -> 1.
enum class ErrKind {
  Shape,     // dimension mismatch
  Index,     // out-of-range index or label
  Usage,     // API misuse (non-scalar loss, partition violation, ...)
  Config,    // bad configuration value or unknown key
  Capacity,  // not enough data to satisfy a request
  Data,      // ingestion / dataset content problem
  Io,        // file system or codec failure
  Numeric,   // NaN/Inf detected in a forward pass
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void raise(ErrKind k, const std::string& msg) { throw Error(k, msg); }

inline const char* err_kind_name(ErrKind k) {
  switch (k) {
    case ErrKind::Shape: return "shape";
    case ErrKind::Index: return "index";
    case ErrKind::Usage: return "usage";
    case ErrKind::Config: return "config";
    case ErrKind::Capacity: return "capacity";
    case ErrKind::Data: return "data";
    case ErrKind::Io: return "io";
    case ErrKind::Numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace mimlab
