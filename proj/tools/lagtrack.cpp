#include <iostream>

#include "lagtrack/cli.hpp"

int main(int argc, char** argv) { return lagtrack::cli::run(argc, argv, std::cout, std::cerr); }
