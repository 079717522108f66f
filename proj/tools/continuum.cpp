#include <iostream>

#include "continuum/cli/commands.hpp"

int main(int argc, char** argv) { return continuum::cli::run_cli(argc, argv, std::cout, std::cerr); }
