#include <iostream>

#include "nsk/cli.hpp"

int main(int argc, char** argv) { return nsk::cli::main(argc, argv, std::cout, std::cerr); }
