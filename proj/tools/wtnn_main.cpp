#include <iostream>
#include <string>
#include <vector>

#include "wtnn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return wtnn::run_cli(args, std::cout, std::cerr);
}
