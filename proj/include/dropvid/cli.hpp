#pragma once

#include <stdexcept>
#include <string>

namespace dropvid::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingArtifact = 3,
  kShape = 4,
  kDataMismatch = 5,
};

class CliError : public std::runtime_error {
public:
  CliError(ExitCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

private:
  ExitCode code_;
};

// Subcommands synth, train, infer, eval. Returns the process exit code;
// errors go to stderr.
int run(int argc, const char* const* argv);

}  // namespace dropvid::cli
