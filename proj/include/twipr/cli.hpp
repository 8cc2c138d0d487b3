#pragma once

#include <iosfwd>

namespace twipr {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitAllFell = 2;
inline constexpr int kExitIo = 3;

// Subcommands run, compare, sweep, protocol-dump.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

// Byte-offset tables of both packet layouts.
void print_protocol(std::ostream& out, int horizon);

}  // namespace twipr
