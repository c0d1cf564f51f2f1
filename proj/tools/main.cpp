#include <iostream>

#include "monoflow/cli.hpp"

int main(int argc, char** argv) { return monoflow::run_cli(argc, argv, std::cout, std::cerr); }
