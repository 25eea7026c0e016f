#pragma once

namespace eikfield {

// Entry point for the eikfield command-line tool. Returns a process exit
// code: 0 on success, 1 for usage/configuration errors, 2 for numerical
// failures (divergence, non-finite evaluations).
int run_cli(int argc, const char* const* argv);

}  // namespace eikfield
