#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vanguard::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,        // runtime failure or a failed check
  kUsage = 2,          // unknown flag, bad flag value, missing subcommand
  kMissingInput = 3,   // an input file does not exist
  kSchema = 4,         // an input record or the config is malformed
  kService = 5,        // transport failure or protocol violation (service reply, input stream)
};

/// Runs one subcommand. `args` excludes the program name. Errors are
/// reported on `err` as a one-line JSON object.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace vanguard::cli
