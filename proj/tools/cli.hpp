#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ddt::cli {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// DDT_VERBOSE: 0 silent, 1 progress (default), 2 chatty.
int verbosity();

}  // namespace ddt::cli
