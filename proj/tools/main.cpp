#include <iostream>

#include "subbag/cli.hpp"

int main(int argc, char** argv) { return subbag::cli::run(argc, argv, std::cout, std::cerr); }
