#pragma once

namespace kdaif::cli {

// Parses argv, runs one subcommand and returns the process exit code. Errors
// are reported on stderr as a single JSON object.
int run(int argc, char** argv);

}  // namespace kdaif::cli
