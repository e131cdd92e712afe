#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace tulm::cli {

// Shared with the SIGINT handler. While `deferred` is set the handler only
// records the request, and the running command shuts down cleanly.
struct InterruptState {
  std::atomic<bool> requested{false};
  std::atomic<bool> deferred{false};
};

inline constexpr int kInterruptedExit = 130;

// Parses arguments (argv without the program name) and runs the command.
// Returns the process exit code; errors are reported on `err` as a JSON
// document {"error": {"kind", "message", "exit_code"}}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            InterruptState* interrupt = nullptr);

// Runs an already-parsed configuration (seed and output must be set).
int run_command(const RunConfig& config, std::ostream& out, std::ostream& err,
                InterruptState* interrupt = nullptr);

}  // namespace tulm::cli
