#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ror {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInternal = 2;

// Runs one subcommand. args excludes the program name. Returns 0 on success,
// 1 for bad input (unknown flags, schema violations, corrupt containers, a
// failed verify), 2 for anything else.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

}  // namespace ror
