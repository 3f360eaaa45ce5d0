#include <iostream>
#include <string>
#include <vector>

#include "stratum/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return stratum::run_cli(args, std::cout, std::cerr);
}
