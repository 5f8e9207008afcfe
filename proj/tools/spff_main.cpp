#include <iostream>

#include "spff/cli.hpp"

int main(int argc, char** argv) { return spff::cli::run(argc, argv, std::cout, std::cerr); }
