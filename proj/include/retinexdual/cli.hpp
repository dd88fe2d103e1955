#pragma once

// Command-line front end: train, restore, evaluate, analyze-frequency,
// count-params, ablate and synthesize. Records are printed as JSON lines.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data error,
// 4 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace retinexdual {

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitNumerical = 4 };

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace retinexdual
