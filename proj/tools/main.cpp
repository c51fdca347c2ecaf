#include <iostream>

#include "scot/cli.hpp"

int main(int argc, char** argv) { return scot::run_cli(argc, argv, std::cout, std::cerr); }
