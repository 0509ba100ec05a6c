#include <iostream>

#include "repspk/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return repspk::run_cli(args, std::cin, std::cout, std::cerr);
}
