#pragma once

// Teleoperation session engine.
//
// One tick, in order:
//   1. leader side drains the follower->leader link (force/pose telemetry,
//      which also feeds the landmark calibration)
//   2. leader pose is sampled (script or live input) and sent as ExpertPose
//   3. follower side drains the leader->follower link
//   4. follower pose advances (calibration presses or tracking model)
//   5. follower measures contact force on the patient and sends it back
//   6. leader renders the ellipsoid contact force against its own pose
//   7. one TrajectoryRecord is appended
//
// The engine is single-owner and fully determined by its config and seeds.

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "teleop/geometry.hpp"
#include "teleop/netsim.hpp"
#include "teleop/pose.hpp"
#include "teleop/protocol.hpp"
#include "teleop/trajectory.hpp"

namespace teleop::session {

enum class SessionErrc { InvalidConfig, CalibrationTimeout, WrongPhase };

class SessionError : public std::runtime_error {
 public:
  SessionError(SessionErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  SessionErrc code() const noexcept { return code_; }

 private:
  SessionErrc code_;
};

/// Minimum-jerk time scaling on [0, 1].
double min_jerk(double s);

Quat rotation_from_vector(const Vec3& rotvec);

// Follower ------------------------------------------------------------------

struct FollowerParams {
  double reaction_delay_ms = 250.0;
  double time_constant_ms = 150.0;
  std::optional<Vec3> offset;           // m; sampled per session when unset
  std::optional<Vec3> offset_rotation;  // rotation vector, rad; sampled when unset
  double noise_pos_sd = 0.002;          // m, per axis
  double noise_rot_sd_deg = 1.0;        // rms angle
  std::uint64_t seed = 0;

  // Ranges for the sampled offset.
  double offset_min = 0.005;
  double offset_max = 0.040;
  double offset_rot_min_deg = 3.0;
  double offset_rot_max_deg = 15.0;

  bool valid() const;
};

/// Noise-free follower state advanced by one first-order lag step toward
/// target = (leader position + offset, leader orientation * offset rotation).
/// alpha = 1 - exp(-dt / time_constant); a zero time constant copies the
/// target exactly.
Pose follower_step(const FollowerParams& params, const Pose& state, const Pose& leader_delayed,
                   const Vec3& offset, const Quat& offset_rotation, double dt);

/// Simulated human follower: reaction delay line, lagged tracking toward the
/// offset target, and additive pose noise on the reported pose.
class FollowerModel {
 public:
  explicit FollowerModel(FollowerParams params);

  /// A leader pose arrived from the network at receive_us.
  void observe(const Pose& leader, std::uint64_t receive_us);

  /// Advance the tracking state to now_us. The state holds until the first
  /// leader pose has cleared the reaction delay line.
  void step(std::uint64_t now_us, double dt);

  /// Adds hand/measurement noise to a pose.
  Pose with_noise(const Pose& p);

  /// Overrides the noise-free state (start of tracking).
  void reset_state(const Pose& p) { state_ = p; }

  const Pose& state() const { return state_; }
  const Vec3& offset() const { return offset_; }
  const Quat& offset_rotation() const { return offset_rotation_; }
  const FollowerParams& params() const { return params_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  FollowerParams params_;
  std::mt19937_64 rng_;
  Vec3 offset_;
  Quat offset_rotation_;
  std::deque<std::pair<std::uint64_t, Pose>> delay_line_;  // (available_at, pose)
  std::optional<Pose> target_;
  Pose state_;
};

// Calibration ---------------------------------------------------------------

struct CalibrationCapture {
  int step = 0;
  std::uint64_t t_us = 0;
  Vec3 point = Vec3::Zero();
};

/// Four-landmark capture by pressing: a step completes at the first sample
/// where the force magnitude has stayed above the threshold continuously for
/// the hold time. After a capture the force must drop to or below the
/// threshold before the next step can start timing.
class CalibrationProcedure {
 public:
  CalibrationProcedure(double force_threshold_n, std::uint64_t hold_us,
                       std::uint64_t step_timeout_us);

  /// Starts step 1's timeout clock.
  void begin(std::uint64_t t_us);

  std::optional<CalibrationCapture> feed(std::uint64_t t_us, const Vec3& force, const Vec3& tip);

  /// Captures the current step immediately (manual advance).
  CalibrationCapture force_capture(std::uint64_t t_us, const Vec3& tip);

  /// Throws SessionError(CalibrationTimeout) if the current step has been
  /// open longer than the step timeout.
  void check_timeout(std::uint64_t t_us) const;

  int step() const { return step_; }  // 1-4, 5 once complete
  bool complete() const { return step_ > 4; }
  geometry::CalibrationSet points() const;
  const std::array<std::optional<Vec3>, 4>& captured() const { return captured_; }

 private:
  CalibrationCapture capture(std::uint64_t t_us, const Vec3& tip);

  double threshold_;
  std::uint64_t hold_us_;
  std::uint64_t timeout_us_;
  int step_ = 1;
  std::uint64_t step_started_us_ = 0;
  bool started_ = false;
  bool armed_ = true;
  std::optional<std::uint64_t> above_since_;
  std::array<std::optional<Vec3>, 4> captured_;
};

struct ForceSample {
  std::uint64_t t_us = 0;
  Vec3 force = Vec3::Zero();
  Vec3 tip = Vec3::Zero();
};

/// Feeds a force/tip stream through a procedure and fits the ellipsoid.
/// Throws SessionError(CalibrationTimeout) when a step exceeds its limit or
/// the stream ends before all four landmarks are captured, and propagates
/// GeometryError(DegenerateCalibration).
geometry::EllipsoidModel run_calibration(CalibrationProcedure& proc,
                                         std::span<const ForceSample> stream,
                                         double longitudinal_semi_axis =
                                             geometry::kDefaultLongitudinalSemiAxis);

// Simulated patient -----------------------------------------------------------

/// Ground-truth patient for the simulated follower: an ellipsoidal body
/// resting on a bed plane, both elastic.
struct PatientModel {
  geometry::EllipsoidModel body{Vec3(0.0, 0.11, 0.0), 0.16, 0.11, 0.35};
  double bed_y = 0.0;
  double tissue_stiffness = 600.0;  // N/m
  double bed_stiffness = 20000.0;   // N/m

  bool valid() const;

  /// Reaction force on a transducer tip at `tip`.
  Vec3 reaction_force(const Vec3& tip) const;

  /// Landmark surface point and outward press normal for steps 1-4.
  std::pair<Vec3, Vec3> landmark(int step) const;

  Pose rest_pose() const;
};

struct PressParams {
  double target_force_n = 8.0;
  double hover_m = 0.03;
  double approach_s = 0.8;  // per leg: rise, cross, descend
  double press_s = 0.5;
  double release_s = 0.4;
  double placement_sd_m = 0.003;
};

/// Follower-side landmark collection: approach each landmark, press in until
/// the target force, hold until the leader acknowledges the capture, release.
class PressScript {
 public:
  PressScript(PatientModel patient, const Pose& start, std::uint64_t t0_us, PressParams params,
              std::uint64_t seed);

  Pose pose_at(std::uint64_t t_us);
  void acknowledge(int step, std::uint64_t t_us);
  bool finished() const { return step_ > 4; }

 private:
  struct Segment {
    Pose from;
    Pose to;
    std::uint64_t t0 = 0;
    std::uint64_t duration = 0;
  };
  void begin_step(std::uint64_t t_us, const Pose& from);

  PatientModel patient_;
  PressParams params_;
  std::mt19937_64 rng_;
  int step_ = 1;
  Pose hover_;
  Pose press_;
  std::vector<Segment> segments_;
  bool holding_ = false;
};

// Scripted leader ---------------------------------------------------------------

struct ScanScriptParams {
  std::uint64_t seed = 0;
  double speed_mps = 0.05;
  double depth_m = 0.005;  // leader tip below the fitted surface
  int freezes = 2;
  double freeze_s = 3.0;
  double dwell_max_s = 1.0;
  double lead_in_s = 1.0;
};

/// Waypoint sweep over the fitted ellipsoid with minimum-jerk segments,
/// dwell pauses and image-freeze holds.
class ScanScript {
 public:
  ScanScript(const geometry::EllipsoidModel& fitted, const Pose& start, std::uint64_t t0_us,
             double duration_s, ScanScriptParams params);

  Pose pose_at(std::uint64_t t_us) const;
  bool frozen_at(std::uint64_t t_us) const;

  /// Surface-mapped pose for (x, angle from vertical, tilt about local x and
  /// z, spin about the probe axis).
  Pose surface_pose(double x, double phi, double tilt_x, double tilt_z, double spin) const;

 private:
  struct Waypoint {
    double x, phi, tilt_x, tilt_z, spin;
  };
  struct Segment {
    std::uint64_t t0 = 0;
    std::uint64_t duration = 0;
    bool direct = false;  // pose-space interpolation (lead-in)
    bool frozen = false;
    Pose from_pose;
    Pose to_pose;
    Waypoint from{};
    Waypoint to{};
  };
  const Segment& segment_at(std::uint64_t t_us) const;

  geometry::EllipsoidModel fitted_;
  ScanScriptParams params_;
  std::vector<Segment> segments_;
};

// Haptics -------------------------------------------------------------------

/// First-difference velocity smoothed by a single-pole low-pass.
class VelocityFilter {
 public:
  VelocityFilter(double cutoff_hz, double dt);
  const Vec3& update(const Vec3& position);
  const Vec3& value() const { return v_; }

 private:
  double dt_;
  double alpha_;
  std::optional<Vec3> last_;
  Vec3 v_ = Vec3::Zero();
};

// Engine --------------------------------------------------------------------

struct SessionConfig {
  double tick_rate_hz = 100.0;
  double duration_s = 60.0;  // scanning time of a scripted session
  netsim::NetworkPreset leader_to_follower;
  netsim::NetworkPreset follower_to_leader;
  FollowerParams follower;
  geometry::ContactParams contact;
  double calibration_force_threshold_n = 5.0;
  double threshold_hold_ms = 300.0;
  double calibration_step_timeout_s = 30.0;
  bool skip_calibration = false;  // start scanning on the exact patient landmarks
  double longitudinal_semi_axis_m = geometry::kDefaultLongitudinalSemiAxis;
  double velocity_cutoff_hz = 20.0;
  Vec3 tip_offset = Vec3::Zero();  // transducer frame, m
  PatientModel patient;
  PressParams press;
  ScanScriptParams script;

  /// Throws SessionError(InvalidConfig), e.g. "tick_rate out of range".
  void validate() const;
  std::uint64_t tick_time_us(std::uint64_t tick) const;
};

class Session {
 public:
  enum class LeaderMode { Scripted, Live };

  explicit Session(SessionConfig config, LeaderMode mode = LeaderMode::Scripted);

  /// Idle -> AwaitingCalibration step 1 (or Scanning when calibration is
  /// skipped). Scripted sessions start themselves on the first tick.
  void start();

  /// Advance one tick. Any module error ends the session with a diagnostic.
  void tick();

  /// Leader-side commands: START, STOP, STEP, FREEZE, UNFREEZE,
  /// GAINS kp=<v|x,y,z> kd=<v|x,y,z>. Returns false for unknown or
  /// out-of-phase commands.
  bool apply_control(const protocol::ControlCommand& cmd);

  void set_live_leader_pose(const Pose& pose);

  bool ended() const { return phase_ == Phase::Ended; }
  Phase phase() const { return phase_; }
  int calibration_step() const;
  std::uint64_t next_tick_us() const { return config_.tick_time_us(tick_index_); }
  std::uint64_t ticks() const { return tick_index_; }
  const std::optional<geometry::EllipsoidModel>& ellipsoid() const { return ellipsoid_; }
  const Vec3& last_force() const { return last_force_; }
  const Pose& leader_pose() const { return leader_pose_; }
  const Pose& follower_pose() const { return follower_reported_; }
  const std::optional<protocol::ForcePosePayload>& follower_telemetry() const {
    return telemetry_;
  }
  const std::vector<TrajectoryRecord>& records() const { return records_; }
  const std::string& diagnostic() const { return diagnostic_; }
  const std::vector<CalibrationCapture>& captures() const { return captures_; }
  const FollowerModel& follower() const { return follower_; }
  const netsim::Link& leader_to_follower() const { return l2f_; }
  const netsim::Link& follower_to_leader() const { return f2l_; }
  const SessionConfig& config() const { return config_; }

  /// Header fields describing seeds and sampled follower parameters.
  std::map<std::string, std::string> header_fields() const;

 private:
  enum class FollowerMode { Idle, Calibrating, Tracking };

  void tick_impl(std::uint64_t now);
  void leader_receive(std::uint64_t now);
  void follower_receive(std::uint64_t now);
  void on_capture(const CalibrationCapture& c, std::uint64_t now);
  void enter_scanning(std::uint64_t now);
  void send_leader(std::uint64_t now, protocol::Payload payload);
  void end(const std::string& why);
  Vec3 tip_of(const Pose& p) const;

  SessionConfig config_;
  LeaderMode mode_;
  double dt_;
  std::uint64_t tick_index_ = 0;
  Phase phase_ = Phase::Idle;
  std::string diagnostic_;

  netsim::Link l2f_;
  netsim::Link f2l_;
  protocol::ChannelSender leader_tx_;
  protocol::ChannelSender follower_tx_;

  // Leader side.
  CalibrationProcedure calibration_;
  std::vector<CalibrationCapture> captures_;
  std::optional<geometry::EllipsoidModel> ellipsoid_;
  std::optional<protocol::ForcePosePayload> telemetry_;
  std::optional<ScanScript> scan_;
  std::uint64_t scan_start_us_ = 0;
  Pose leader_pose_;
  std::optional<Pose> live_pose_;
  bool manual_freeze_ = false;
  VelocityFilter velocity_;
  Vec3 last_force_ = Vec3::Zero();

  // Follower side.
  FollowerMode follower_mode_ = FollowerMode::Idle;
  FollowerModel follower_;
  std::optional<PressScript> press_;
  Pose follower_true_;
  Pose follower_reported_;

  std::vector<TrajectoryRecord> records_;
};

struct SessionResult {
  std::vector<TrajectoryRecord> records;
  std::map<std::string, std::string> header_fields;
  std::optional<geometry::EllipsoidModel> ellipsoid;
  std::vector<CalibrationCapture> captures;
  std::string diagnostic;  // empty on success
  bool ok = true;
  std::array<netsim::ChannelStats, protocol::kChannelCount> l2f_stats{};
  std::array<netsim::ChannelStats, protocol::kChannelCount> f2l_stats{};
};

/// Runs a scripted session (calibration presses, then the scan) to the end.
SessionResult run_scripted_session(const SessionConfig& config);

}  // namespace teleop::session
