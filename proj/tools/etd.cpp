#include <iostream>
#include <string>
#include <vector>

#include "etd/cli.hpp"
#include "etd/runtime.hpp"

int main(int argc, char** argv) {
  etd::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return etd::cli::run(args, std::cout, std::cerr);
}
