#include "diffattack/cli.hpp"

int main(int argc, char** argv) {
  return diffattack::cli::run(std::vector<std::string>(argv, argv + argc));
}
