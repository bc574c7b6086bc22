#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mstate::cli {

/// Exit codes.
inline constexpr int kSuccess = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kStageFailure = 2;

/// Runs one subcommand. `args` excludes the program name. Progress goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mstate::cli
