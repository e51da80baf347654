// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "dcomp/cli.hpp"

int main(int argc, char** argv) { return dcomp::cli_main(argc, argv, std::cout, std::cerr); }
