// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <iostream>

#include "scanstereo_cli/commands.hpp"

int main(int argc, char** argv) {
  return scanstereo::cli::run(argc, argv, std::cout, std::cerr);
}
