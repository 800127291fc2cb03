#include <iostream>
#include <string>
#include <vector>

#include "unmt/cli.hpp"

extern char** environ;

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return unmt::cli::run(args, std::cout, std::cerr, environ);
}
