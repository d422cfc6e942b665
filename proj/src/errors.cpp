#include "spiro/errors.hpp"

namespace spiro {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::data: return "data";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::io: return "io";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

}  // namespace spiro
