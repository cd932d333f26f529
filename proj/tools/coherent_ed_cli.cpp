#include <iostream>

#include "coherent_ed/cli.hpp"

int main(int argc, char** argv) {
  return coherent_ed::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
