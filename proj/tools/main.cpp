#include <iostream>

#include "jft/cli/cli.hpp"

int main(int argc, char** argv) { return jft::cli::run_cli(argc, argv, std::cout, std::cerr); }
