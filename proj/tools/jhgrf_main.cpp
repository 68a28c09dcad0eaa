#include <iostream>

#include "jhgrf/cli.hpp"

int main(int argc, char** argv) {
  return jhgrf::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
