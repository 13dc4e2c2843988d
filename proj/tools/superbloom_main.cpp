#include <iostream>

#include "superbloom/cli.hpp"

int main(int argc, char** argv) { return superbloom::cli::run(argc, argv, std::cout, std::cerr); }
