#include "heightformer/cli.hpp"

int main(int argc, char** argv) {
  return heightformer::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
