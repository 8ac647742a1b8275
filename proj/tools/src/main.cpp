#include <iostream>

#include "tica/cli/app.hpp"
#include "tica/runtime.hpp"

int main(int argc, char** argv) {
  tica::tune_allocator();
  return tica::cli::run_cli(argc, argv, std::cout, std::cerr);
}
