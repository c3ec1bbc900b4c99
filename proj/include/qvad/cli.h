#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qvad {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Entry point of the qvad command. args excludes the program name. Failures
// print one line "error<TAB>kind<TAB>message" to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qvad
