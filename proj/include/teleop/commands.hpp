#pragma once

// Subcommand implementations behind the `teleop` binary. Results go to `out`
// as `key = value` lines; diagnostics go to `err`.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace teleop::commands {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInputError = 2,  // config or input file problems
  kRuntimeError = 3,
  kPortInUse = 4,
};

struct RunOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::string> out;
};

int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err);

struct AnalyzeOptions {
  std::vector<std::string> logs;  // the k-th log is scan k when pairing with scores
  std::optional<std::string> scores;
  std::optional<std::string> out;  // optional copy of the key-value report
};

int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err);

struct ReplayOptions {
  std::string log;
  std::optional<std::string> config_path;  // contact gains, filter cutoff
  std::optional<std::string> out;
};

/// Re-renders the leader contact forces of a log against the ellipsoid in its
/// header, with the configured (possibly changed) gains.
int cmd_replay(const ReplayOptions& opts, std::ostream& out, std::ostream& err);

struct ServeOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::optional<std::string> out;
  std::uint16_t port = 8765;
  std::string address = "127.0.0.1";
  double max_seconds = 0.0;  // 0 runs until interrupted
};

int cmd_serve(const ServeOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace teleop::commands
