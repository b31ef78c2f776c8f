#include <iostream>

#include "cli.hpp"
#include "ddt/runtime.hpp"

int main(int argc, char** argv) {
    ddt::tune_allocator();
    return ddt::cli::run(argc, argv, std::cout, std::cerr);
}
