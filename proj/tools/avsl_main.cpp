#include "avsl/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return avsl::cli::run(args).exit_code;
}
