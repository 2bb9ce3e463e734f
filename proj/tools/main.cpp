#include <iostream>

#include "dcm/cli.hpp"

int main(int argc, char** argv) { return dcm::run_cli(argc, argv, std::cout, std::cerr); }
