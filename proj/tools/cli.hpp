#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace relpos::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumeric = 2, kCapacity = 3 };

/// Runs one command. `args` excludes the program name. Errors are reported on
/// `err` and mapped to exit codes; nothing throws out of here.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relpos::cli
