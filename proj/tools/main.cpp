#include <string>
#include <vector>

#include "neurodyn/cli.hpp"

int main(int argc, char** argv) {
  return neurodyn::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
