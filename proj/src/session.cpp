#include "teleop/session.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "teleop/seeds.hpp"

namespace teleop::session {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::uint64_t ms_to_us(double ms) { return static_cast<std::uint64_t>(std::llround(ms * 1000.0)); }
std::uint64_t s_to_us(double s) { return static_cast<std::uint64_t>(std::llround(s * 1e6)); }

Vec3 gaussian3(std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  const double x = n(rng);
  const double y = n(rng);
  const double z = n(rng);
  return {x, y, z};
}

Vec3 unit_direction(std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v = gaussian3(rng, 1.0);
    const double len = v.norm();
    if (len > 1e-9) return v / len;
  }
}

/// Probe axis (local +y) along an outward surface normal.
Quat probe_orientation(const Vec3& outward) {
  return Quat::FromTwoVectors(Vec3::UnitY(), outward).normalized();
}

Pose interpolate(const Pose& a, const Pose& b, double s) {
  Pose p;
  p.position = a.position + s * (b.position - a.position);
  p.orientation = a.orientation.slerp(s, b.orientation);
  return p;
}

std::string vec_text(const Vec3& v, double scale) {
  std::ostringstream os;
  os << format_double(v.x() * scale) << ',' << format_double(v.y() * scale) << ','
     << format_double(v.z() * scale);
  return os.str();
}

bool parse_gain(const std::string& text, Vec3& out) {
  std::istringstream in(text);
  std::vector<double> vals;
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(part, &used));
      if (used != part.size()) return false;
    } catch (const std::exception&) {
      return false;
    }
  }
  if (vals.size() == 1) {
    out = Vec3::Constant(vals[0]);
  } else if (vals.size() == 3) {
    out = Vec3(vals[0], vals[1], vals[2]);
  } else {
    return false;
  }
  return out.allFinite() && (out.array() >= 0.0).all();
}

}  // namespace

double min_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

Quat rotation_from_vector(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, rotvec / angle));
}

// Follower ------------------------------------------------------------------

bool FollowerParams::valid() const {
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  return nonneg(reaction_delay_ms) && nonneg(time_constant_ms) && nonneg(noise_pos_sd) &&
         nonneg(noise_rot_sd_deg) && nonneg(offset_min) && offset_max >= offset_min &&
         nonneg(offset_rot_min_deg) && offset_rot_max_deg >= offset_rot_min_deg &&
         (!offset || offset->allFinite()) && (!offset_rotation || offset_rotation->allFinite());
}

Pose follower_step(const FollowerParams& params, const Pose& state, const Pose& leader_delayed,
                   const Vec3& offset, const Quat& offset_rotation, double dt) {
  Pose target;
  target.position = leader_delayed.position + offset;
  target.orientation = leader_delayed.orientation * offset_rotation;

  Pose next;
  next.t_us = state.t_us;
  if (params.time_constant_ms <= 0.0) {
    next.position = target.position;
    next.orientation = target.orientation;
    return next;
  }
  const double alpha = 1.0 - std::exp(-dt / (params.time_constant_ms * 1e-3));
  next.position = state.position + alpha * (target.position - state.position);
  next.orientation = state.orientation.slerp(alpha, target.orientation).normalized();
  return next;
}

FollowerModel::FollowerModel(FollowerParams params)
    : params_(std::move(params)), rng_(params_.seed) {
  if (params_.offset) {
    offset_ = *params_.offset;
  } else {
    const Vec3 dir = unit_direction(rng_);
    std::uniform_real_distribution<double> mag(params_.offset_min, params_.offset_max);
    offset_ = dir * mag(rng_);
  }
  if (params_.offset_rotation) {
    offset_rotation_ = rotation_from_vector(*params_.offset_rotation);
  } else {
    const Vec3 axis = unit_direction(rng_);
    std::uniform_real_distribution<double> ang(params_.offset_rot_min_deg * kDegToRad,
                                               params_.offset_rot_max_deg * kDegToRad);
    offset_rotation_ = rotation_from_vector(axis * ang(rng_));
  }
}

void FollowerModel::observe(const Pose& leader, std::uint64_t receive_us) {
  delay_line_.emplace_back(receive_us + ms_to_us(params_.reaction_delay_ms), leader);
}

void FollowerModel::step(std::uint64_t now_us, double dt) {
  while (!delay_line_.empty() && delay_line_.front().first <= now_us) {
    target_ = delay_line_.front().second;
    delay_line_.pop_front();
  }
  if (target_) {
    state_ = follower_step(params_, state_, *target_, offset_, offset_rotation_, dt);
  }
  state_.t_us = now_us;
}

Pose FollowerModel::with_noise(const Pose& p) {
  Pose out = p;
  if (params_.noise_pos_sd > 0.0) out.position += gaussian3(rng_, params_.noise_pos_sd);
  if (params_.noise_rot_sd_deg > 0.0) {
    const double per_axis = params_.noise_rot_sd_deg * kDegToRad / std::sqrt(3.0);
    out.orientation = (out.orientation * rotation_from_vector(gaussian3(rng_, per_axis))).normalized();
  }
  return out;
}

// Calibration ---------------------------------------------------------------

CalibrationProcedure::CalibrationProcedure(double force_threshold_n, std::uint64_t hold_us,
                                           std::uint64_t step_timeout_us)
    : threshold_(force_threshold_n), hold_us_(hold_us), timeout_us_(step_timeout_us) {}

void CalibrationProcedure::begin(std::uint64_t t_us) {
  started_ = true;
  step_started_us_ = t_us;
}

void CalibrationProcedure::check_timeout(std::uint64_t t_us) const {
  if (started_ && !complete() && t_us > step_started_us_ + timeout_us_) {
    throw SessionError(SessionErrc::CalibrationTimeout,
                       "CalibrationTimeout: step " + std::to_string(step_) + " not completed within " +
                           format_double(static_cast<double>(timeout_us_) * 1e-6) + " s");
  }
}

CalibrationCapture CalibrationProcedure::capture(std::uint64_t t_us, const Vec3& tip) {
  CalibrationCapture c{step_, t_us, tip};
  captured_[static_cast<std::size_t>(step_ - 1)] = tip;
  ++step_;
  step_started_us_ = t_us;
  armed_ = false;
  above_since_.reset();
  return c;
}

std::optional<CalibrationCapture> CalibrationProcedure::feed(std::uint64_t t_us, const Vec3& force,
                                                             const Vec3& tip) {
  if (complete()) return std::nullopt;
  if (!started_) begin(t_us);
  check_timeout(t_us);

  if (force.norm() > threshold_) {
    if (!armed_) return std::nullopt;
    if (!above_since_) above_since_ = t_us;
    if (t_us - *above_since_ >= hold_us_) return capture(t_us, tip);
  } else {
    armed_ = true;
    above_since_.reset();
  }
  return std::nullopt;
}

CalibrationCapture CalibrationProcedure::force_capture(std::uint64_t t_us, const Vec3& tip) {
  if (complete()) {
    throw SessionError(SessionErrc::WrongPhase, "calibration already complete");
  }
  if (!started_) begin(t_us);
  return capture(t_us, tip);
}

geometry::CalibrationSet CalibrationProcedure::points() const {
  if (!complete()) {
    throw SessionError(SessionErrc::WrongPhase, "calibration incomplete");
  }
  return geometry::CalibrationSet{*captured_[0], *captured_[1], *captured_[2], *captured_[3]};
}

geometry::EllipsoidModel run_calibration(CalibrationProcedure& proc,
                                         std::span<const ForceSample> stream,
                                         double longitudinal_semi_axis) {
  for (const ForceSample& s : stream) {
    proc.feed(s.t_us, s.force, s.tip);
    if (proc.complete()) break;
  }
  if (!proc.complete()) {
    throw SessionError(SessionErrc::CalibrationTimeout,
                       "CalibrationTimeout: stream ended during step " + std::to_string(proc.step()));
  }
  return geometry::fit_ellipsoid(proc.points(), longitudinal_semi_axis);
}

// Patient -------------------------------------------------------------------

bool PatientModel::valid() const {
  return body.valid() && std::isfinite(bed_y) && tissue_stiffness > 0.0 && bed_stiffness > 0.0;
}

Vec3 PatientModel::reaction_force(const Vec3& tip) const {
  Vec3 f = Vec3::Zero();
  if (tip != body.center) {
    const geometry::Penetration pen = geometry::penetration_depth(body, tip);
    if (pen.intersects && pen.depth > 0.0) f += tissue_stiffness * pen.depth * pen.normal;
  }
  if (tip.y() < bed_y) f += bed_stiffness * (bed_y - tip.y()) * Vec3::UnitY();
  return f;
}

std::pair<Vec3, Vec3> PatientModel::landmark(int step) const {
  const Vec3& c = body.center;
  switch (step) {
    case 1: return {c + Vec3(0.0, body.b, 0.0), Vec3::UnitY()};
    case 2: return {c + Vec3(0.0, 0.0, -body.a), -Vec3::UnitZ()};
    case 3: return {c + Vec3(0.0, 0.0, body.a), Vec3::UnitZ()};
    case 4: return {Vec3(c.x() + 0.1, bed_y, c.z() + body.a + 0.12), Vec3::UnitY()};
    default: throw std::out_of_range("landmark step must be 1-4");
  }
}

Pose PatientModel::rest_pose() const {
  Pose p;
  p.position = Vec3(body.center.x(), bed_y + 2.0 * body.b + 0.15, body.center.z() + body.a + 0.1);
  return p;
}

// Press script ----------------------------------------------------------------

PressScript::PressScript(PatientModel patient, const Pose& start, std::uint64_t t0_us,
                         PressParams params, std::uint64_t seed)
    : patient_(std::move(patient)), params_(params), rng_(seed) {
  begin_step(t0_us, start);
}

void PressScript::begin_step(std::uint64_t t_us, const Pose& from) {
  auto [point, normal] = patient_.landmark(step_);
  // Hand placement error in the tangent plane.
  const Vec3 t1 = normal.unitOrthogonal();
  const Vec3 t2 = normal.cross(t1);
  std::normal_distribution<double> place(0.0, params_.placement_sd_m);
  point += place(rng_) * t1 + place(rng_) * t2;

  const double stiffness = step_ == 4 ? patient_.bed_stiffness : patient_.tissue_stiffness;
  const double depth = params_.target_force_n / stiffness;
  const Quat q = probe_orientation(normal);
  hover_ = Pose{0, point + params_.hover_m * normal, q};
  press_ = Pose{0, point - depth * normal, q};

  // Travel above the body: rise, cross, descend to the hover point.
  const double safe_y = std::max(patient_.body.center.y() + patient_.body.b + params_.hover_m,
                                 hover_.position.y());
  Pose rise = from;
  rise.position.y() = std::max(safe_y, from.position.y());
  Pose cross = hover_;
  cross.position.y() = rise.position.y();

  segments_.clear();
  const std::uint64_t leg = s_to_us(params_.approach_s);
  std::uint64_t t = t_us;
  for (const auto& [a, b] : {std::pair{from, rise}, std::pair{rise, cross}, std::pair{cross, hover_}}) {
    segments_.push_back(Segment{a, b, t, leg});
    t += leg;
  }
  segments_.push_back(Segment{hover_, press_, t, s_to_us(params_.press_s)});
  holding_ = true;
}

Pose PressScript::pose_at(std::uint64_t t_us) {
  Pose out = segments_.back().to;
  for (const Segment& s : segments_) {
    if (t_us < s.t0) {
      out = s.from;
      break;
    }
    if (t_us < s.t0 + s.duration) {
      const double u = static_cast<double>(t_us - s.t0) / static_cast<double>(s.duration);
      out = interpolate(s.from, s.to, min_jerk(u));
      break;
    }
  }
  out.t_us = t_us;
  return out;
}

void PressScript::acknowledge(int step, std::uint64_t t_us) {
  if (step != step_ || !holding_) return;
  const Pose here = pose_at(t_us);
  holding_ = false;
  ++step_;
  const std::uint64_t release_end = t_us + s_to_us(params_.release_s);
  const Pose up = hover_;
  segments_.clear();
  segments_.push_back(Segment{here, up, t_us, s_to_us(params_.release_s)});
  if (step_ <= 4) {
    const auto release = segments_.front();
    begin_step(release_end, up);
    segments_.insert(segments_.begin(), release);
  }
}

// Scan script -----------------------------------------------------------------

ScanScript::ScanScript(const geometry::EllipsoidModel& fitted, const Pose& start,
                       std::uint64_t t0_us, double duration_s, ScanScriptParams params)
    : fitted_(fitted), params_(params) {
  std::mt19937_64 rng(params_.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double x_lo = fitted_.center.x() - 0.04;
  const double x_hi = fitted_.center.x() + 0.16;
  const double phi_max = 50.0 * kDegToRad;
  const double tilt_max = 12.0 * kDegToRad;
  const double spin_max = 25.0 * kDegToRad;

  auto next_waypoint = [&](const Waypoint& w) {
    Waypoint n;
    n.x = std::clamp(w.x + uniform(-0.08, 0.08), x_lo, x_hi);
    n.phi = std::clamp(w.phi + uniform(-0.45, 0.45), -phi_max, phi_max);
    n.tilt_x = uniform(-tilt_max, tilt_max);
    n.tilt_z = uniform(-tilt_max, tilt_max);
    n.spin = uniform(-spin_max, spin_max);
    return n;
  };
  auto travel_us = [&](const Pose& a, const Pose& b) {
    const double d = (a.position - b.position).norm();
    return s_to_us(std::clamp(d / params_.speed_mps, 1.0, 5.0));
  };

  const std::uint64_t end_us = t0_us + s_to_us(duration_s);
  std::uint64_t t = t0_us;

  const Waypoint first{uniform(x_lo, x_hi), uniform(-0.5, 0.5), 0.0, 0.0, 0.0};

  // Hold at the start pose, then rise above the body, cross and descend
  // onto the first waypoint along its normal.
  const Pose target = surface_pose(first.x, first.phi, 0.0, 0.0, 0.0);
  const Vec3 n = geometry::surface_normal(fitted_, target.position);
  Pose above = target;
  above.position += 0.04 * n;
  Pose rise = start;
  rise.position.y() = std::max(start.position.y(), above.position.y());
  auto direct = [&](const Pose& from, const Pose& to, std::uint64_t duration) {
    Segment seg;
    seg.t0 = t;
    seg.duration = duration;
    seg.direct = true;
    seg.from_pose = from;
    seg.to_pose = to;
    segments_.push_back(seg);
    t += duration;
  };
  direct(start, start, s_to_us(params_.lead_in_s));
  direct(start, rise, travel_us(start, rise));
  direct(rise, above, travel_us(rise, above));
  direct(above, target, travel_us(above, target));

  std::vector<std::uint64_t> freeze_at;
  for (int k = 1; k <= params_.freezes; ++k) {
    freeze_at.push_back(t0_us + s_to_us(duration_s * k / (params_.freezes + 1)));
  }
  std::size_t next_freeze = 0;

  Waypoint cur = first;
  while (t < end_us) {
    Segment dwell;
    dwell.t0 = t;
    dwell.from = cur;
    dwell.to = cur;
    if (next_freeze < freeze_at.size() && t >= freeze_at[next_freeze]) {
      dwell.duration = s_to_us(params_.freeze_s);
      dwell.frozen = true;
      ++next_freeze;
    } else {
      dwell.duration = s_to_us(uniform(0.0, params_.dwell_max_s));
    }
    if (dwell.duration > 0) {
      segments_.push_back(dwell);
      t += dwell.duration;
    }

    const Waypoint nxt = next_waypoint(cur);
    Segment move;
    move.t0 = t;
    move.from = cur;
    move.to = nxt;
    move.duration = travel_us(surface_pose(cur.x, cur.phi, cur.tilt_x, cur.tilt_z, cur.spin),
                              surface_pose(nxt.x, nxt.phi, nxt.tilt_x, nxt.tilt_z, nxt.spin));
    segments_.push_back(move);
    t += move.duration;
    cur = nxt;
  }
}

Pose ScanScript::surface_pose(double x, double phi, double tilt_x, double tilt_z,
                              double spin) const {
  const geometry::EllipsoidModel& m = fitted_;
  const double u = (x - m.center.x()) / m.c;
  const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
  const Vec3 surf(x, m.center.y() + m.b * s * std::cos(phi), m.center.z() + m.a * s * std::sin(phi));
  const Vec3 n = geometry::surface_normal(m, surf);
  Pose p;
  p.position = surf - params_.depth_m * n;
  p.orientation = (probe_orientation(n) * Eigen::AngleAxisd(tilt_x, Vec3::UnitX()) *
                   Eigen::AngleAxisd(tilt_z, Vec3::UnitZ()) *
                   Eigen::AngleAxisd(spin, Vec3::UnitY()))
                      .normalized();
  return p;
}

const ScanScript::Segment& ScanScript::segment_at(std::uint64_t t_us) const {
  for (const Segment& s : segments_) {
    if (t_us < s.t0 + s.duration) return s;
  }
  return segments_.back();
}

Pose ScanScript::pose_at(std::uint64_t t_us) const {
  const Segment& s = segment_at(t_us);
  double u = 1.0;
  if (s.duration > 0 && t_us >= s.t0) {
    u = std::min(1.0, static_cast<double>(t_us - s.t0) / static_cast<double>(s.duration));
  } else if (t_us < s.t0) {
    u = 0.0;
  }
  const double k = min_jerk(u);
  Pose p;
  if (s.direct) {
    p = interpolate(s.from_pose, s.to_pose, k);
  } else {
    auto lerp = [k](double a, double b) { return a + k * (b - a); };
    p = surface_pose(lerp(s.from.x, s.to.x), lerp(s.from.phi, s.to.phi),
                     lerp(s.from.tilt_x, s.to.tilt_x), lerp(s.from.tilt_z, s.to.tilt_z),
                     lerp(s.from.spin, s.to.spin));
  }
  p.t_us = t_us;
  return p;
}

bool ScanScript::frozen_at(std::uint64_t t_us) const {
  const Segment& s = segment_at(t_us);
  return s.frozen && t_us >= s.t0 && t_us < s.t0 + s.duration;
}

// Haptics -------------------------------------------------------------------

VelocityFilter::VelocityFilter(double cutoff_hz, double dt) : dt_(dt) {
  const double rc = 1.0 / (2.0 * std::numbers::pi * cutoff_hz);
  alpha_ = dt / (dt + rc);
}

const Vec3& VelocityFilter::update(const Vec3& position) {
  if (last_) {
    const Vec3 raw = (position - *last_) / dt_;
    v_ += alpha_ * (raw - v_);
  }
  last_ = position;
  return v_;
}

// Engine --------------------------------------------------------------------

void SessionConfig::validate() const {
  auto fail = [](const std::string& why) { throw SessionError(SessionErrc::InvalidConfig, why); };
  if (!(tick_rate_hz >= 10.0 && tick_rate_hz <= 1000.0)) fail("tick_rate out of range");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) fail("duration must be positive");
  if (!leader_to_follower.valid() || !follower_to_leader.valid()) fail("invalid network preset");
  if (!follower.valid()) fail("invalid follower parameters");
  if (!contact.valid()) fail("contact gains must be non-negative");
  if (!(calibration_force_threshold_n > 0.0) || !std::isfinite(calibration_force_threshold_n)) {
    fail("calibration force threshold must be positive");
  }
  if (!(threshold_hold_ms >= 0.0)) fail("threshold hold must be non-negative");
  if (!(calibration_step_timeout_s > 0.0)) fail("calibration step timeout must be positive");
  if (!(longitudinal_semi_axis_m > 0.0)) fail("longitudinal semi-axis must be positive");
  if (!(velocity_cutoff_hz > 0.0)) fail("velocity cutoff must be positive");
  if (!tip_offset.allFinite()) fail("tip offset must be finite");
  if (!patient.valid()) fail("invalid patient model");
  if (!(script.speed_mps > 0.0)) fail("script speed must be positive");
  if (script.freezes < 0 || !(script.freeze_s >= 0.0)) fail("invalid freeze settings");
}

std::uint64_t SessionConfig::tick_time_us(std::uint64_t tick) const {
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(tick) * 1e6 / tick_rate_hz));
}

Session::Session(SessionConfig config, LeaderMode mode)
    : config_((config.validate(), std::move(config))),
      mode_(mode),
      dt_(1.0 / config_.tick_rate_hz),
      l2f_(config_.leader_to_follower),
      f2l_(config_.follower_to_leader),
      calibration_(config_.calibration_force_threshold_n, ms_to_us(config_.threshold_hold_ms),
                   s_to_us(config_.calibration_step_timeout_s)),
      velocity_(config_.velocity_cutoff_hz, 1.0 / config_.tick_rate_hz),
      follower_(config_.follower) {
  follower_true_ = config_.patient.rest_pose();
  follower_reported_ = follower_true_;
  follower_.reset_state(follower_true_);
  leader_pose_ = follower_true_;
}

int Session::calibration_step() const {
  return phase_ == Phase::AwaitingCalibration ? calibration_.step() : 0;
}

Vec3 Session::tip_of(const Pose& p) const {
  return p.position + p.orientation * config_.tip_offset;
}

void Session::send_leader(std::uint64_t now, protocol::Payload payload) {
  l2f_.send(leader_tx_.make(now, std::move(payload)), now);
}

void Session::start() {
  if (phase_ != Phase::Idle) {
    throw SessionError(SessionErrc::WrongPhase, "session already started");
  }
  const std::uint64_t now = next_tick_us();
  if (config_.skip_calibration) {
    const PatientModel& p = config_.patient;
    ellipsoid_ = geometry::fit_ellipsoid(
        geometry::CalibrationSet{p.landmark(1).first, p.landmark(2).first, p.landmark(3).first,
                                 p.landmark(4).first},
        config_.longitudinal_semi_axis_m);
    if (mode_ == LeaderMode::Scripted) {
      const ScanScript probe(*ellipsoid_, leader_pose_, now, 1.0, config_.script);
      leader_pose_ = probe.surface_pose(ellipsoid_->center.x(), 0.0, 0.0, 0.0, 0.0);
    } else if (live_pose_) {
      leader_pose_ = *live_pose_;
    }
    Pose aligned;
    aligned.position = leader_pose_.position + follower_.offset();
    aligned.orientation = leader_pose_.orientation * follower_.offset_rotation();
    follower_.reset_state(aligned);
    follower_true_ = aligned;
    follower_mode_ = FollowerMode::Tracking;
    protocol::CalibrationPayload fitted;
    fitted.kind = protocol::CalibrationPayload::Kind::FittedModel;
    fitted.model = *ellipsoid_;
    send_leader(now, fitted);
    enter_scanning(now);
    return;
  }
  phase_ = Phase::AwaitingCalibration;
  calibration_.begin(now);
  send_leader(now, protocol::ControlPayload{"START"});
}

void Session::enter_scanning(std::uint64_t now) {
  phase_ = Phase::Scanning;
  scan_start_us_ = now;
  if (mode_ == LeaderMode::Scripted) {
    scan_.emplace(*ellipsoid_, leader_pose_, now, config_.duration_s, config_.script);
  }
}

void Session::on_capture(const CalibrationCapture& c, std::uint64_t now) {
  captures_.push_back(c);
  protocol::CalibrationPayload point;
  point.kind = protocol::CalibrationPayload::Kind::CapturedPoint;
  point.step = static_cast<std::uint8_t>(c.step);
  point.point = c.point;
  send_leader(now, point);
  if (calibration_.complete()) {
    ellipsoid_ = geometry::fit_ellipsoid(calibration_.points(), config_.longitudinal_semi_axis_m);
    protocol::CalibrationPayload fitted;
    fitted.kind = protocol::CalibrationPayload::Kind::FittedModel;
    fitted.model = *ellipsoid_;
    send_leader(now, fitted);
    enter_scanning(now);
  }
}

void Session::leader_receive(std::uint64_t now) {
  for (const protocol::WireMessage& msg : f2l_.poll(now)) {
    if (const auto* fp = std::get_if<protocol::ForcePosePayload>(&msg.payload)) {
      telemetry_ = *fp;
      if (phase_ == Phase::AwaitingCalibration) {
        const Pose p{msg.timestamp_us, fp->pose.position, fp->pose.orientation};
        if (auto cap = calibration_.feed(msg.timestamp_us, fp->force, tip_of(p))) {
          on_capture(*cap, now);
        }
      }
    }
  }
}

void Session::follower_receive(std::uint64_t now) {
  using protocol::CalibrationPayload;
  for (const protocol::WireMessage& msg : l2f_.poll(now)) {
    if (const auto* pose = std::get_if<protocol::PosePayload>(&msg.payload)) {
      follower_.observe(Pose{msg.timestamp_us, pose->position, pose->orientation}, now);
    } else if (const auto* ctl = std::get_if<protocol::ControlPayload>(&msg.payload)) {
      const auto cmd = protocol::ControlCommand::parse(ctl->text);
      if (cmd && cmd->verb == "START" && follower_mode_ == FollowerMode::Idle) {
        follower_mode_ = FollowerMode::Calibrating;
        press_.emplace(config_.patient, follower_true_, now, config_.press,
                       derive_seed(config_.follower.seed, "press"));
      }
    } else if (const auto* cal = std::get_if<CalibrationPayload>(&msg.payload)) {
      if (cal->kind == CalibrationPayload::Kind::CapturedPoint) {
        if (press_) press_->acknowledge(cal->step, now);
      } else if (follower_mode_ != FollowerMode::Tracking) {
        follower_mode_ = FollowerMode::Tracking;
        follower_.reset_state(follower_true_);
      }
    }
  }
}

void Session::end(const std::string& why) {
  if (phase_ == Phase::Ended) return;
  phase_ = Phase::Ended;
  diagnostic_ = why;
  try {
    send_leader(next_tick_us(), protocol::ControlPayload{"STOP"});
  } catch (const std::exception&) {
  }
}

void Session::tick() {
  if (phase_ == Phase::Ended) return;
  const std::uint64_t now = next_tick_us();
  try {
    tick_impl(now);
  } catch (const std::exception& e) {
    end(e.what());
  }
  ++tick_index_;
}

void Session::tick_impl(std::uint64_t now) {
  if (mode_ == LeaderMode::Scripted && phase_ == Phase::Idle) start();

  leader_receive(now);
  if (phase_ == Phase::AwaitingCalibration) calibration_.check_timeout(now);

  if (mode_ == LeaderMode::Scripted && scan_ &&
      now >= scan_start_us_ + s_to_us(config_.duration_s)) {
    end("");
    return;
  }

  // Leader pose.
  if (mode_ == LeaderMode::Scripted) {
    if (scan_) {
      leader_pose_ = scan_->pose_at(now);
      phase_ = (scan_->frozen_at(now) || manual_freeze_) ? Phase::Frozen : Phase::Scanning;
    } else if (telemetry_) {
      // The virtual transducer rests on the follower's transducer while the
      // follower collects landmarks.
      leader_pose_.position = telemetry_->pose.position;
      leader_pose_.orientation = telemetry_->pose.orientation;
    }
  } else if (live_pose_) {
    leader_pose_ = *live_pose_;
  }
  leader_pose_.t_us = now;
  if (phase_ != Phase::Idle) {
    send_leader(now, protocol::PosePayload{leader_pose_.position, leader_pose_.orientation});
  }

  // Follower side.
  follower_receive(now);
  switch (follower_mode_) {
    case FollowerMode::Idle: break;
    case FollowerMode::Calibrating: follower_true_ = press_->pose_at(now); break;
    case FollowerMode::Tracking:
      follower_.step(now, dt_);
      follower_true_ = follower_.state();
      break;
  }
  follower_true_.t_us = now;
  follower_reported_ = follower_.with_noise(follower_true_);
  const Vec3 measured = config_.patient.reaction_force(tip_of(follower_true_));
  if (phase_ != Phase::Idle) {
    protocol::ForcePosePayload fp{
        measured, protocol::PosePayload{follower_reported_.position, follower_reported_.orientation}};
    f2l_.send(follower_tx_.make(now, fp), now);
  }

  // Leader haptics.
  const Vec3& v = velocity_.update(leader_pose_.position);
  last_force_ = Vec3::Zero();
  if ((phase_ == Phase::Scanning || phase_ == Phase::Frozen) && ellipsoid_) {
    last_force_ = geometry::contact_force(*ellipsoid_, leader_pose_.position, v, config_.contact).force;
  }

  if (phase_ != Phase::Idle) {
    TrajectoryRecord r;
    r.t_us = now;
    r.leader = leader_pose_;
    r.follower = follower_reported_;
    r.force = last_force_;
    r.phase = phase_;
    r.calibration_step = calibration_step();
    records_.push_back(r);
  }
}

bool Session::apply_control(const protocol::ControlCommand& cmd) {
  if (phase_ == Phase::Ended) return false;
  const std::uint64_t now = next_tick_us();
  try {
    if (cmd.verb == "START") {
      if (phase_ != Phase::Idle) return false;
      start();
      return true;
    }
    if (cmd.verb == "STOP") {
      end("");
      return true;
    }
    if (cmd.verb == "STEP") {
      if (phase_ != Phase::AwaitingCalibration || !telemetry_) return false;
      const Pose p{now, telemetry_->pose.position, telemetry_->pose.orientation};
      on_capture(calibration_.force_capture(now, tip_of(p)), now);
      return true;
    }
    if (cmd.verb == "FREEZE") {
      if (phase_ != Phase::Scanning) return false;
      manual_freeze_ = true;
      phase_ = Phase::Frozen;
      return true;
    }
    if (cmd.verb == "UNFREEZE") {
      if (phase_ != Phase::Frozen) return false;
      manual_freeze_ = false;
      phase_ = Phase::Scanning;
      return true;
    }
    if (cmd.verb == "GAINS") {
      geometry::ContactParams next = config_.contact;
      for (const auto& [k, v] : cmd.args) {
        Vec3* dst = k == "kp" ? &next.kp : k == "kd" ? &next.kd : nullptr;
        if (!dst || !parse_gain(v, *dst)) return false;
      }
      config_.contact = next;
      return true;
    }
  } catch (const std::exception& e) {
    end(e.what());
    return false;
  }
  return false;
}

void Session::set_live_leader_pose(const Pose& pose) { live_pose_ = pose; }

std::map<std::string, std::string> Session::header_fields() const {
  std::map<std::string, std::string> f;
  f["tick_rate"] = format_double(config_.tick_rate_hz);
  f["preset"] = config_.leader_to_follower.name;
  f["net_seed_l2f"] = std::to_string(config_.leader_to_follower.seed);
  f["net_seed_f2l"] = std::to_string(config_.follower_to_leader.seed);
  f["follower_seed"] = std::to_string(config_.follower.seed);
  f["script_seed"] = std::to_string(config_.script.seed);
  f["follower_offset_mm"] = vec_text(follower_.offset(), 1000.0);
  const Eigen::AngleAxisd aa(follower_.offset_rotation());
  f["follower_offset_rot_deg"] = vec_text(aa.axis() * aa.angle(), 180.0 / std::numbers::pi);
  return f;
}

SessionResult run_scripted_session(const SessionConfig& config) {
  Session s(config, Session::LeaderMode::Scripted);
  const double budget_s = 4.0 * config.calibration_step_timeout_s + config.duration_s + 10.0;
  const auto max_ticks = static_cast<std::uint64_t>(budget_s * config.tick_rate_hz);
  while (!s.ended() && s.ticks() < max_ticks) s.tick();
  SessionResult r;
  if (!s.ended()) {
    r.diagnostic = "session exceeded its time budget";
  } else {
    r.diagnostic = s.diagnostic();
  }
  r.ok = r.diagnostic.empty();
  r.records = s.records();
  r.header_fields = s.header_fields();
  r.ellipsoid = s.ellipsoid();
  r.captures = s.captures();
  for (std::size_t c = 0; c < protocol::kChannelCount; ++c) {
    r.l2f_stats[c] = s.leader_to_follower().stats(static_cast<protocol::ChannelId>(c));
    r.f2l_stats[c] = s.follower_to_leader().stats(static_cast<protocol::ChannelId>(c));
  }
  return r;
}

}  // namespace teleop::session
