#pragma once

#include <iosfwd>

namespace mmtrack::cli {

// Entry point of the `mmtrack` tool. Subcommands: synth, train, link, color,
// associate, eval. Returns the process exit status; errors are reported as a
// single line on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmtrack::cli
