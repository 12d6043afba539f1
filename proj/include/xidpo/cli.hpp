#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xidpo::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kValidation = 3,
  kIo = 4,
  kCheckFailed = 5,
};

// Runs one subcommand. args excludes the program name, e.g.
// {"select-xi", "--data", "d.jsonl", "--policy", "p.json", "--t", "0.95"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xidpo::cli
