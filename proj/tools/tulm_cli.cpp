#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "cli_app.hpp"

namespace {

tulm::cli::InterruptState g_interrupt;

extern "C" void on_sigint(int) {
  if (g_interrupt.deferred.load()) {
    g_interrupt.requested.store(true);
  } else {
    std::_Exit(tulm::cli::kInterruptedExit);
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  std::vector<std::string> args(argv + 1, argv + argc);
  return tulm::cli::run_cli(args, std::cout, std::cerr, &g_interrupt);
}
