#include <iostream>

#include "pnmkv/cli.hpp"

int main(int argc, char** argv) { return pnmkv::run_cli(argc, argv, std::cout, std::cerr); }
