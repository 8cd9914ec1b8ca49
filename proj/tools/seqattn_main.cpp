// SPDX-License-Identifier: Apache-2.0
#include "seqattn/cli.hpp"

int main(int argc, char** argv) { return seqattn::run_cli(argc, argv); }
