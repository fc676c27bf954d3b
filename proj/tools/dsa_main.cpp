#include <iostream>

#include "dsa/cli.hpp"

int main(int argc, char** argv) {
    return dsa::cli::dispatch(argc, argv, std::cout, std::cerr);
}
