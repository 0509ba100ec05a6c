#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace repspk {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

// Dispatches one CLI invocation. Streams are injected so tests can run
// commands in-process and capture output.
int run_cli(const std::vector<std::string>& args, std::istream& in,
            std::ostream& out, std::ostream& err);

}  // namespace repspk
