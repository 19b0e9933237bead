#include "cocosoda/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cocosoda::cli::dispatch(argc, argv, std::cout, std::cerr, std::cin); }
