#include <iostream>

#include "pearl/cli.hpp"

int main(int argc, char** argv) { return pearl::run_cli(argc, argv, std::cout, std::cerr); }
