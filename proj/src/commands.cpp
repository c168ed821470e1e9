#include "teleop/commands.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "teleop/analytics.hpp"
#include "teleop/config.hpp"
#include "teleop/serve.hpp"
#include "teleop/session.hpp"
#include "teleop/trajectory.hpp"

namespace teleop::commands {
namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string pm(const analytics::MeanSd& m, int decimals) {
  return fixed(m.mean, decimals) + " ± " + fixed(m.sd, decimals);
}

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

std::string vec_text(const Vec3& v) {
  return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
}

config::RunConfig load_run_config(const std::optional<std::string>& path) {
  return path ? config::load_config(*path) : config::RunConfig{};
}

TrajectoryLog load_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config::ConfigError("cannot open log '" + path + "'");
  try {
    return read_log(in);
  } catch (const LogError& e) {
    throw config::ConfigError(path + ": " + e.what());
  }
}

void write_report(std::ostream& out, const analytics::TrackingReport& r, const std::string& prefix) {
  out << prefix << "rmse_pos_mm = " << fixed(r.rmse_pos_mm, 2) << '\n'
      << prefix << "nrmse_pos_mm = " << fixed(r.nrmse_pos_mm, 2) << '\n'
      << prefix << "rmse_ang_deg = " << fixed(r.rmse_ang_deg, 2) << '\n'
      << prefix << "nrmse_ang_deg = " << fixed(r.nrmse_ang_deg, 2) << '\n'
      << prefix << "mean_offset_mm = " << fixed(r.mean_offset_mm.x(), 2) << ','
      << fixed(r.mean_offset_mm.y(), 2) << ',' << fixed(r.mean_offset_mm.z(), 2) << '\n'
      << prefix << "samples = " << r.sample_count << '\n';
}

void write_stats(std::ostream& out, const std::string& prefix,
                 const std::array<netsim::ChannelStats, protocol::kChannelCount>& stats) {
  for (std::size_t c = 0; c < stats.size(); ++c) {
    const auto& s = stats[c];
    out << prefix << to_string(static_cast<protocol::ChannelId>(c)) << " = sent:" << s.sent
        << " delivered:" << s.delivered << " dropped:" << s.dropped << '\n';
  }
}

}  // namespace

int cmd_run(const RunOptions& opts, std::ostream& out, std::ostream& err) {
  config::RunConfig rc;
  session::SessionConfig cfg;
  try {
    rc = load_run_config(opts.config_path);
    if (opts.seed) rc.seed = *opts.seed;
    if (opts.preset) rc.preset = *opts.preset;
    if (opts.out) rc.out = *opts.out;
    cfg = rc.resolve();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const session::SessionResult result = session::run_scripted_session(cfg);
  const double wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("session simulated in {:.3f} s wall time", wall_s);

  LogHeader header;
  header.config_hash = config::config_hash(cfg);
  header.fields = result.header_fields;
  header.fields["seed"] = std::to_string(rc.seed);
  header.ellipsoid = result.ellipsoid;

  std::ofstream log(rc.out, std::ios::binary);
  if (!log) {
    err << "error: cannot write log '" << rc.out << "'\n";
    return kRuntimeError;
  }
  write_log(log, header, result.records);
  log.close();

  std::ostringstream summary;
  summary << "log = " << rc.out << '\n'
          << "config_hash = " << header.config_hash << '\n'
          << "seed = " << rc.seed << '\n'
          << "status = " << (result.ok ? "ok" : "error") << '\n'
          << "records = " << result.records.size() << '\n';
  for (const auto& c : result.captures) {
    summary << "calibration.step" << c.step << " = " << vec_text(c.point) << " t_us:" << c.t_us
            << '\n';
  }
  if (result.ellipsoid) {
    const auto& m = *result.ellipsoid;
    summary << "ellipsoid = " << vec_text(m.center) << " a:" << format_double(m.a)
            << " b:" << format_double(m.b) << " c:" << format_double(m.c) << '\n';
  }
  try {
    write_report(summary, analytics::tracking_report(result.records), "tracking.");
  } catch (const analytics::AnalyticsError& e) {
    summary << "tracking = unavailable (" << e.what() << ")\n";
  }
  write_stats(summary, "net.l2f.", result.l2f_stats);
  write_stats(summary, "net.f2l.", result.f2l_stats);
  out << summary.str();

  if (!rc.summary.empty()) {
    std::ofstream s(rc.summary);
    if (!s) {
      err << "error: cannot write summary '" << rc.summary << "'\n";
      return kRuntimeError;
    }
    s << summary.str();
  }
  if (!result.ok) {
    err << "error: session ended: " << result.diagnostic << '\n';
    return kRuntimeError;
  }
  return kOk;
}

int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.logs.empty() && !opts.scores) {
    err << "error: nothing to analyze; give log files and/or --scores\n";
    return kUsage;
  }
  std::ostringstream rep;
  std::vector<analytics::TrackingReport> reports;
  std::vector<int> scan_ids;
  std::set<std::string> hashes;

  for (std::size_t i = 0; i < opts.logs.size(); ++i) {
    const std::string& path = opts.logs[i];
    TrajectoryLog log;
    try {
      log = load_log(path);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kInputError;
    }
    int scan = static_cast<int>(i + 1);
    if (auto it = log.header.fields.find("scan"); it != log.header.fields.end()) {
      try {
        scan = std::stoi(it->second);
      } catch (const std::exception&) {
        err << "error: " << path << ": bad scan id '" << it->second << "'\n";
        return kInputError;
      }
    }
    hashes.insert(log.header.config_hash);
    try {
      reports.push_back(analytics::tracking_report(log.records));
    } catch (const analytics::AnalyticsError& e) {
      err << "error: " << path << ": " << e.what() << '\n';
      return kInputError;
    }
    scan_ids.push_back(scan);
    rep << "scan " << scan << " log = " << path << '\n';
    write_report(rep, reports.back(), "scan " + std::to_string(scan) + " ");
  }

  if (!reports.empty()) {
    const analytics::ScanAggregate agg = analytics::aggregate_scans(reports);
    rep << "aggregate scans = " << agg.scans << '\n'
        << "aggregate rmse_pos_mm = " << pm(agg.rmse_pos_mm, 1) << '\n'
        << "aggregate nrmse_pos_mm = " << pm(agg.nrmse_pos_mm, 1) << '\n'
        << "aggregate rmse_ang_deg = " << pm(agg.rmse_ang_deg, 1) << '\n'
        << "aggregate nrmse_ang_deg = " << pm(agg.nrmse_ang_deg, 1) << '\n';
  }

  if (opts.scores) {
    std::ifstream in(*opts.scores);
    if (!in) {
      err << "error: cannot open scores '" << *opts.scores << "'\n";
      return kInputError;
    }
    std::optional<std::string> score_hash;
    std::vector<analytics::QualityScore> scores;
    try {
      scores = analytics::read_scores(in, &score_hash);
    } catch (const std::exception& e) {
      err << "error: " << *opts.scores << ": " << e.what() << '\n';
      return kInputError;
    }
    if (score_hash) hashes.insert(*score_hash);
    const analytics::QualitySummary q = analytics::quality_summary(scores);
    rep << "quality targets = " << q.total_targets << '\n'
        << "quality scored_targets = " << q.scored_targets << '\n'
        << "quality missing_union = " << q.missing_union << '\n';
    for (const auto& [rater, n] : q.missing_per_rater) {
      rep << "quality missing." << rater << " = " << n << '\n';
    }
    rep << "quality mean = " << pm(q.score, 2) << '\n'
        << "quality fraction_ge3_all_raters = " << fixed(q.fraction_all_ge3, 4) << '\n'
        << "quality fraction_5_all_raters = " << fixed(q.fraction_all_5, 4) << '\n'
        << "quality histogram =";
    for (std::size_t v = 0; v < q.histogram.size(); ++v) rep << ' ' << v << ':' << q.histogram[v];
    rep << '\n';
    for (const auto& [scan, m] : q.mean_per_scan) {
      rep << "quality scan " << scan << " mean = " << fixed(m, 2) << '\n';
    }

    if (!reports.empty()) {
      std::vector<analytics::TrackingReport> paired;
      std::vector<double> quality;
      for (std::size_t i = 0; i < reports.size(); ++i) {
        if (auto it = q.mean_per_scan.find(scan_ids[i]); it != q.mean_per_scan.end()) {
          paired.push_back(reports[i]);
          quality.push_back(it->second);
        }
      }
      try {
        const auto c = analytics::rmse_quality_correlation(paired, quality);
        for (const auto& [name, r] : {std::pair{"position", c.position},
                                      std::pair{"orientation", c.orientation}}) {
          rep << "correlation " << name << " n = " << r.n << '\n'
              << "correlation " << name << " pearson_r = " << fixed(r.pearson_r, 3) << '\n'
              << "correlation " << name << " pearson_p = " << fixed(r.pearson_p, 3) << '\n'
              << "correlation " << name << " spearman_rho = " << fixed(r.spearman_rho, 3) << '\n'
              << "correlation " << name << " spearman_p = " << fixed(r.spearman_p, 3) << '\n';
        }
      } catch (const analytics::AnalyticsError& e) {
        rep << "correlation = unavailable (" << e.what() << ")\n";
      }
    }
  }

  if (hashes.size() > 1) {
    err << "warning: config hash mismatch between inputs:";
    for (const auto& h : hashes) err << ' ' << h;
    err << '\n';
  }
  out << rep.str();
  if (opts.out) {
    std::ofstream f(*opts.out);
    if (!f) {
      err << "error: cannot write report '" << *opts.out << "'\n";
      return kRuntimeError;
    }
    f << rep.str();
  }
  return kOk;
}

int cmd_replay(const ReplayOptions& opts, std::ostream& out, std::ostream& err) {
  TrajectoryLog log;
  config::RunConfig rc;
  try {
    log = load_log(opts.log);
    rc = load_run_config(opts.config_path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  if (!log.header.ellipsoid) {
    err << "error: " << opts.log << ": no ellipsoid in header\n";
    return kInputError;
  }
  double tick_rate = rc.session.tick_rate_hz;
  if (auto it = log.header.fields.find("tick_rate"); it != log.header.fields.end()) {
    try {
      tick_rate = std::stod(it->second);
    } catch (const std::exception&) {
      err << "error: " << opts.log << ": bad tick_rate '" << it->second << "'\n";
      return kInputError;
    }
  }
  if (!rc.session.contact.valid() || !(tick_rate > 0.0) || !(rc.session.velocity_cutoff_hz > 0.0)) {
    err << "error: invalid contact gains, tick rate or filter cutoff\n";
    return kInputError;
  }

  session::VelocityFilter velocity(rc.session.velocity_cutoff_hz, 1.0 / tick_rate);
  std::size_t rendered = 0;
  double max_change = 0.0;
  double sum_sq = 0.0;
  double max_force = 0.0;
  for (TrajectoryRecord& r : log.records) {
    const Vec3& v = velocity.update(r.leader.position);
    Vec3 f = Vec3::Zero();
    if (r.phase == Phase::Scanning || r.phase == Phase::Frozen) {
      f = geometry::contact_force(*log.header.ellipsoid, r.leader.position, v, rc.session.contact)
              .force;
      ++rendered;
    }
    const double change = (f - r.force).norm();
    max_change = std::max(max_change, change);
    sum_sq += change * change;
    max_force = std::max(max_force, f.norm());
    r.force = f;
  }

  if (opts.out) {
    std::ofstream f(*opts.out, std::ios::binary);
    if (!f) {
      err << "error: cannot write '" << *opts.out << "'\n";
      return kRuntimeError;
    }
    write_log(f, log.header, log.records);
  }
  const double rms = log.records.empty() ? 0.0 : std::sqrt(sum_sq / log.records.size());
  out << "records = " << log.records.size() << '\n'
      << "rendered = " << rendered << '\n'
      << "max_force_n = " << format_double(max_force) << '\n'
      << "max_force_change_n = " << format_double(max_change) << '\n'
      << "rms_force_change_n = " << format_double(rms) << '\n';
  return kOk;
}

int cmd_serve(const ServeOptions& opts, std::ostream& out, std::ostream& err) {
  serve::ServerOptions so;
  try {
    config::RunConfig rc = load_run_config(opts.config_path);
    if (opts.seed) rc.seed = *opts.seed;
    if (opts.preset) rc.preset = *opts.preset;
    if (opts.out) rc.out = *opts.out;
    so.session = rc.resolve();
    so.config_hash = config::config_hash(so.session);
    so.header_fields["seed"] = std::to_string(rc.seed);
    so.log_path = rc.out;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  so.address = opts.address;
  so.port = opts.port;

  serve::Server server(so);
  try {
    server.start();
  } catch (const serve::PortInUse& e) {
    err << "error: " << e.what() << '\n';
    return kPortInUse;
  }
  out << "listening = " << opts.address << ':' << server.port() << '\n' << std::flush;

  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    server.wait(0.1);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.max_seconds > 0.0 && elapsed >= opts.max_seconds) break;
  }
  server.stop();
  const serve::EngineStatus st = server.status();
  out << "ticks = " << st.ticks << '\n'
      << "phase = " << to_string(st.phase) << '\n'
      << "clients = " << st.clients_served << '\n'
      << "bad_frames = " << st.bad_frames << '\n'
      << "log = " << so.log_path << '\n';
  return kOk;
}

}  // namespace teleop::commands
