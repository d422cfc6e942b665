#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spiro {

enum class ErrorKind {
  parameter,   // argument outside its documented domain
  config,      // inconsistent or unsatisfiable configuration
  shape,       // tensor / array shape disagreement
  numeric,     // NaN/Inf or degenerate numerical state
  degenerate,  // input data that makes a quantity undefined
  data,        // malformed input records or schema mismatch
  integrity,   // corrupt or truncated container file
  io,          // filesystem failure
  usage,       // command-line misuse
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace spiro
