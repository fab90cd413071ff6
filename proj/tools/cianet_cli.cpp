#include <iostream>

#include "cianet/cli.hpp"

int main(int argc, char** argv) { return cianet::cli::run(argc, argv, std::cout, std::cerr); }
