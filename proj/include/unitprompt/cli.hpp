#pragma once

#include <iosfwd>

namespace unitprompt {

// Exit codes: 0 success, 1 internal failure, 2 user or configuration error,
// 3 state-contract violation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitState = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unitprompt
