#include <iostream>

#include "ptychoforge/cli.hpp"

int main(int argc, char** argv) { return ptychoforge::cli::run(argc, argv, std::cout, std::cerr); }
