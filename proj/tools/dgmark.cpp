#include <iostream>
#include <string>
#include <vector>

#include "dgmark/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dgmark::cli::run(args, std::cerr);
}
