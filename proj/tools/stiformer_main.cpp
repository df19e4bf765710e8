#include <iostream>
#include <string>
#include <vector>

#include "stiformer/cli.h"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return stif::run_cli(args, std::cout, std::cerr);
}
