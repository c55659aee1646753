#include <iostream>

#include "advpatch/cli.hpp"

int main(int argc, char** argv) { return advpatch::run_cli(argc, argv, std::cout, std::cerr); }
