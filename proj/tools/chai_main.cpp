#include <iostream>
#include <string>
#include <vector>

#include "chai/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return chai::cli::run(args, std::cout, std::cerr);
}
