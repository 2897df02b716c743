#include <string>
#include <vector>

#include "epiray/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return epiray::cli::run(args);
}
