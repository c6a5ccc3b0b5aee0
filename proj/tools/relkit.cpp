#include <iostream>
#include <string>
#include <vector>

#include "relkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return relkit::run_cli(args, std::cout, std::cerr);
}
