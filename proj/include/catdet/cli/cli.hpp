#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace catdet::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kData = 3,
  kContract = 4,
};

// Entry point of the catdet binary. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace catdet::cli
