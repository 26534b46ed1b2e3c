#include <vector>

#include "uwloc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return uwloc::cli::run(args);
}
