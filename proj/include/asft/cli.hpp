#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace asft {

// Runs the asft command line. `args` excludes the program name. Errors are
// reported as one JSON line {"error": kind, "message": ...} on `err`; the
// return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace asft
