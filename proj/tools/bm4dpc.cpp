#include <iostream>

#include "bm4dpc/cli.hpp"

int main(int argc, char** argv) { return bm4dpc::run_cli(argc, argv, std::cout, std::cerr); }
