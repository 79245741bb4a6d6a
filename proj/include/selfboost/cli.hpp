#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace selfboost {

/// Exit codes of the selfboost command.
enum ExitCode : int { exit_ok = 0, exit_check_failed = 1, exit_usage = 2, exit_numeric_abort = 3 };

/// Entry point of the selfboost command; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace selfboost
