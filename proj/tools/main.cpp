// SPDX-License-Identifier: Apache-2.0
#include <csignal>
#include <iostream>

#include "cli.hpp"

#ifndef PW_TOOL
#error "PW_TOOL names the entry point"
#endif

extern "C" void on_signal(int) { pw::cli::interrupted() = true; }

int main(int argc, char** argv) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::signal(SIGPIPE, SIG_IGN);
    return pw::cli::PW_TOOL(argc, argv, std::cout, std::cerr);
}
