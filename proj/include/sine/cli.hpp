#pragma once

#include <string>
#include <vector>

namespace sine::cli {

// Entry point shared by the binary and the in-process CLI tests. argv-style
// arguments without the program name. Returns the process exit code.
int run(const std::vector<std::string>& args);

}  // namespace sine::cli
