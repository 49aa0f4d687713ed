#include <string>
#include <vector>

#include "sine/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sine::cli::run(args);
}
