#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bitref::cli {

/// Runs one command line (program name excluded) and returns the exit code:
/// 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
int run(const std::vector<std::string>& args);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bitref::cli
