#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evomoe::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kNumericAbort = 3,
  kCorruptArtifact = 4,
};

// Entry point shared by the binary and the tests. `args` excludes argv[0].
// Machine-readable output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evomoe::cli
