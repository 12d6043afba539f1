#include <iostream>
#include <string>
#include <vector>

#include "xidpo/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xidpo::cli::run(args, std::cout, std::cerr);
}
