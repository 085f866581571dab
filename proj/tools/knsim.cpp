#include <iostream>

#include "knsim/cli.hpp"

int main(int argc, char** argv) { return knsim::parse_and_dispatch(argc, argv, std::cout, std::cerr); }
