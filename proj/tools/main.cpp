#include <iostream>
#include <string>
#include <vector>

#include "roarbench/report.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return roarbench::run_cli(args, std::cout, std::cerr);
}
