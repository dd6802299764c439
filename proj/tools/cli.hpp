#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace netdid::cli {

// Runs one subcommand. args excludes the program name. Returns 0 on success,
// 1 for usage or validation errors, 2 for computation errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace netdid::cli
