#include <iostream>

#include "platesym/cli.hpp"

int main(int argc, char** argv) { return platesym::cli::run(argc, argv, std::cout, std::cerr); }
