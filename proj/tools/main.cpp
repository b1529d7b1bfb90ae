#include <vector>

#include "ssp/cli.hpp"

int main(int argc, char** argv) {
  return ssp::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
