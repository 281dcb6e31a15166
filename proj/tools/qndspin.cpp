#include "qndspin/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qndspin::cli::run(argc, argv, std::cout, std::cerr); }
