#include <iostream>

#include "compnet/cli.hpp"

int main(int argc, char** argv) { return compnet::cli::run(argc, argv, std::cout, std::cerr); }
