// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/cli.hpp"

int main(int argc, char** argv) { return echosplat::cli::run_main(argc, argv); }
