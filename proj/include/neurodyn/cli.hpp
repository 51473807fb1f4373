#pragma once

#include <string>
#include <vector>

namespace neurodyn {

// Parses the given command line (program name excluded) and runs the selected
// subcommand.  Returns the process exit code: 0 success, 1 data or training
// error, 2 usage error.  Diagnostics go to stderr.
int cli_main(const std::vector<std::string>& args);

}  // namespace neurodyn
