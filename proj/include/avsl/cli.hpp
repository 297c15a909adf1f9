#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace avsl::cli {

struct CommandResult {
  int exit_code = 0;
  std::vector<std::string> artifacts;
};

/// argv excludes the program name: {"train", "--data-dir", "..."}.
/// Exit codes: 0 success, 1 operation failure, 2 usage error.
CommandResult run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace avsl::cli
