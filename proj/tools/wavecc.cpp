#include <iostream>

#include "wavecc/cli.hpp"

int main(int argc, char** argv) { return wavecc::run(argc, argv, std::cout, std::cerr); }
