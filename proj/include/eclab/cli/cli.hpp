#pragma once

#include <iosfwd>

namespace eclab {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

/// Subcommands: gen-data, train, eval, ablate, compare, grad-check.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace eclab
