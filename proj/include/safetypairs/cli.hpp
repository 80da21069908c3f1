#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sp::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Environment variable that makes `generate` exit abruptly after the given
/// number of store appends. Used to test resumption.
inline constexpr const char* kCrashEnv = "SAFETYPAIRS_CRASH_AFTER_APPENDS";
inline constexpr int kCrashExitCode = 86;

/// Exit codes: 0 success, 1 domain error, 2 usage error.
/// `args` excludes the program name. Machine-readable output goes to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sp::cli
