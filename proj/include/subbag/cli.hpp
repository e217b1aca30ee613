#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace subbag::cli {

/// Entry point of the `subbag` tool. Returns the process exit code:
/// 0 success, 1 usage error, 2 data error, 3 numerical error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace subbag::cli
