#pragma once

#include <ostream>

namespace tica::cli {

/// Parses argv and runs one subcommand. Returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tica::cli
