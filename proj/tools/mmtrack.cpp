#include <iostream>

#include "mmtrack/cli.hpp"

int main(int argc, char** argv) { return mmtrack::cli::run(argc, argv, std::cout, std::cerr); }
