#include <iostream>
#include <string>
#include <vector>

#include "t2i/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return t2i::cli::run(args, std::cout, std::cerr);
}
