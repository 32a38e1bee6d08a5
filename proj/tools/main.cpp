#include <iostream>

#include "vstain/cli.hpp"

int main(int argc, char** argv) {
    return vstain::cli::run(argc, argv, std::cout, std::cerr);
}
