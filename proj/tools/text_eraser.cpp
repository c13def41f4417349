#include <iostream>

#include "eraser/cli.hpp"

int main(int argc, char** argv) { return eraser::cli::run(argc, argv, {std::cout, std::cerr}); }
