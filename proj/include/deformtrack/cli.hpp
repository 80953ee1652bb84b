// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace deformtrack {

/// Command-line entry: subcommands demonstrate, annotate, track, bench.
/// Returns the process exit code (0 success, 1 runtime error, 2 usage).
int run_cli(int argc, const char* const* argv);

}  // namespace deformtrack
