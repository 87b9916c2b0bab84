#include <iostream>

#include "qarel/cli.hpp"

int main(int argc, char** argv) { return qarel::cli::run(argc, argv, std::cout, std::cerr); }
