#pragma once

#include <string>
#include <vector>

namespace confret::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kFormatError = 2,
  kMismatchError = 3,
};

/// Runs one `confret` subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace confret::cli
