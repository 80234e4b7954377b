#include <iostream>

#include "unitprompt/cli.hpp"

int main(int argc, char** argv) { return unitprompt::run_cli(argc, argv, std::cout, std::cerr); }
