#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "teleop/commands.hpp"

using namespace teleop::commands;

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("teleop");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("TELEOP_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }

  CLI::App app{"Tele-ultrasound session simulator and analysis tools"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Simulate a calibrated scripted scan and write its log");
  run_cmd->add_option("--config", run.config_path, "Config file");
  run_cmd->add_option("--seed", run.seed, "Master seed");
  run_cmd->add_option("--preset", run.preset, "Network preset")
      ->check(CLI::IsMember({"ideal", "wifi", "5g"}));
  run_cmd->add_option("--out", run.out, "Trajectory log path");

  AnalyzeOptions analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Tracking metrics, quality scores, correlation");
  analyze_cmd->add_option("logs", analyze.logs, "Trajectory logs, one per scan");
  analyze_cmd->add_option("--scores", analyze.scores, "Image quality score file");
  analyze_cmd->add_option("--out", analyze.out, "Also write the report here");

  ReplayOptions replay;
  auto* replay_cmd = app.add_subcommand("replay", "Re-render leader forces from a logged trajectory");
  replay_cmd->add_option("log", replay.log, "Trajectory log")->required();
  replay_cmd->add_option("--config", replay.config_path, "Config with contact gains");
  replay_cmd->add_option("--out", replay.out, "Write the re-rendered log here");

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Live console bridge over WebSocket");
  serve_cmd->add_option("--config", serve.config_path, "Config file");
  serve_cmd->add_option("--seed", serve.seed, "Master seed");
  serve_cmd->add_option("--preset", serve.preset, "Network preset")
      ->check(CLI::IsMember({"ideal", "wifi", "5g"}));
  serve_cmd->add_option("--out", serve.out, "Trajectory log path");
  serve_cmd->add_option("--port", serve.port, "TCP port");
  serve_cmd->add_option("--address", serve.address, "Bind address");
  serve_cmd->add_option("--max-seconds", serve.max_seconds, "Stop after this long (0: run until interrupted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) return cmd_run(run, std::cout, std::cerr);
    if (*analyze_cmd) return cmd_analyze(analyze, std::cout, std::cerr);
    if (*replay_cmd) return cmd_replay(replay, std::cout, std::cerr);
    if (*serve_cmd) return cmd_serve(serve, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsage;
}
