#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ssaid {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // invalid arguments or inputs
inline constexpr int kExitFailure = 2;  // divergence or failed verification

/// Arguments after splicing the flat JSON of `--config <file>` directly after
/// the subcommand name and moving flags given before it behind, so that every
/// flag on the command line overrides the file.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

/// `args` excludes the program name. Written file paths go to `out`, one per
/// line; diagnostics and usage go to `err`.
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace ssaid
