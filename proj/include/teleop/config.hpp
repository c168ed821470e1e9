#pragma once

// Run configuration: a text file of `key = value` lines, '#' comments.
//
//   tick_rate = 100              Hz, 10-1000
//   duration_s = 60              scanning time
//   seed = 1                     master seed; unset stream seeds derive from it
//   preset = wifi                ideal | wifi | 5g (both directions)
//   net.mean_ms, net.jitter_ms, net.drop_prob, net.allow_reorder
//   net.seed_l2f, net.seed_f2l
//   follower.reaction_delay_ms = 250   placeholder; the study did not measure it
//   follower.time_constant_ms = 150
//   follower.offset_mm = random        or x,y,z
//   follower.offset_rot_deg = random   or a rotation vector x,y,z in degrees
//   follower.noise_mm = 2, follower.noise_deg = 1, follower.seed
//   contact.kp = 500, contact.kd = 5   one value or x,y,z
//   calibration.force_threshold_n = 5, calibration.hold_ms = 300
//   calibration.step_timeout_s = 30, calibration.skip = false
//   ellipsoid.c_m = 10
//   haptics.velocity_cutoff_hz = 20
//   tip_offset_mm = 0,0,0
//   patient.center_m, patient.a_m, patient.b_m, patient.c_m, patient.bed_y_m,
//   patient.tissue_stiffness, patient.bed_stiffness
//   script.seed, script.speed_mps, script.depth_mm, script.freezes, script.freeze_s
//   out = session.log, summary = session.summary
//
// Unknown keys, repeated keys and malformed values are rejected with the line
// number.

#include <cstdint>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>

#include "teleop/session.hpp"

namespace teleop::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetOverrides {
  std::optional<double> mean_ms;
  std::optional<double> jitter_ms;
  std::optional<double> drop_prob;
  std::optional<bool> allow_reorder;
  std::optional<std::uint64_t> seed_l2f;
  std::optional<std::uint64_t> seed_f2l;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string preset = "wifi";
  NetOverrides net;
  std::optional<std::uint64_t> follower_seed;
  std::optional<std::uint64_t> script_seed;
  session::SessionConfig session;  // network presets and seeds filled by resolve()
  std::string out = "session.log";
  std::string summary;  // empty: no summary file

  /// Session config with presets, overrides and derived seeds applied.
  /// Throws ConfigError for an unknown preset and SessionError(InvalidConfig)
  /// for out-of-range values.
  session::SessionConfig resolve() const;
};

RunConfig parse_config(std::istream& in, const std::string& source = "config");
RunConfig load_config(const std::string& path);

/// Canonical text of a resolved config, one `key = value` per line. Seeds and
/// output paths are excluded so runs differing only in seed share a hash.
std::string canonical_text(const session::SessionConfig& cfg);

/// 16 hex digits of FNV-1a over canonical_text().
std::string config_hash(const session::SessionConfig& cfg);

}  // namespace teleop::config
