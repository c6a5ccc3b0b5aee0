#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace relkit {

/// Runs the command line `args` (args[0] is the program name).
/// Returns 0 on success, 1 on runtime errors, 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relkit
