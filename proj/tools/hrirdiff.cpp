#include <iostream>

#include "hrirdiff/cli.hpp"

int main(int argc, char** argv) { return hrirdiff::run_cli(argc, argv, std::cout, std::cerr); }
