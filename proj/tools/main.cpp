#include <iostream>
#include <string>
#include <vector>

#include "mi2v/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mi2v::cli_dispatch(args, std::cout, std::cerr);
}
