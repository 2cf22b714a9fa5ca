#include <iostream>

#include "covloc_cli/cli.hpp"

int main(int argc, char** argv) { return covloc::cli::run(argc, argv, std::cout, std::cerr); }
