#include "twipr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return twipr::run_cli(argc, argv, std::cout, std::cerr); }
