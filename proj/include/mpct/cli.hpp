#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mpct {

// Command-line front door (subcommands run / eval / compare), callable
// in-process for testing. `args` excludes the program name. Returns the
// process exit status: 0 success, 2 invalid configuration or inputs,
// 1 runtime failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mpct
