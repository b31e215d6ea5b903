#include <iostream>
#include <string>
#include <vector>

#include "kfv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return kfv::cli_main(args, std::cout, std::cerr);
}
