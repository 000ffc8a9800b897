#include <iostream>
#include <string>
#include <vector>

#include "aepo/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return aepo::dispatch(args, std::cout, std::cerr);
}
