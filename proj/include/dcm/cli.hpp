#pragma once

#include <exception>
#include <ostream>

namespace dcm {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,     // configuration or usage error
  kExitDiverged = 3,   // simulation divergence
  kExitNumerical = 4,  // fit, filter, observer or solver failure
};

/// Exit code for an exception thrown by a command.
int exit_code_for(const std::exception& e);

/// Entry point of the `dcm` tool:
///   dcm <simulate|fit|estimate|compare-observers|mpc> [--config FILE] [--seed N]
///       [-o DIR] [--jobs N] [--scenario NAME] [--robot NAME|FILE] [--log FILE]
///       [--params FILE] [--observer ekf-sensorless|ekf-torque|momentum] [--timing]
/// Flags override values from the config file.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcm
