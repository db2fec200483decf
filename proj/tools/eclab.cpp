#include <iostream>

#include "eclab/cli/cli.hpp"

int main(int argc, char** argv) { return eclab::run_cli(argc, argv, std::cout, std::cerr); }
