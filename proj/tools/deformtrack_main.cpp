// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/cli.hpp"

int main(int argc, char** argv) { return deformtrack::run_cli(argc, argv); }
