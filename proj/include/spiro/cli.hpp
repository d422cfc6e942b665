#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "spiro/errors.hpp"

namespace spiro::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

int exit_code_for(ErrorKind kind);

/// args excludes the program name. Errors are written to `err` as a single
/// JSON line {"error": kind, "exit_code": n, "message": text}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

std::string version();

}  // namespace spiro::cli
