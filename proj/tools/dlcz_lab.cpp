#include "dlcz/campaign.hpp"

#include <iostream>

int main(int argc, char** argv) { return dlcz::cli::run(argc, argv, std::cout, std::cerr); }
