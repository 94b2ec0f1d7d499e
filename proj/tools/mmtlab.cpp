// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mmtlab/commands.hpp"

int main(int argc, char** argv) { return mmtlab::run_cli(argc, argv, std::cout, std::cerr); }
