#include <iostream>

#include "dcebad/cli/commands.hpp"

int main(int argc, char** argv) { return dcebad::cli::run_cli(argc, argv, std::cout, std::cerr); }
