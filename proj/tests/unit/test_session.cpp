#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "teleop/analytics.hpp"
#include "teleop/session.hpp"

using namespace teleop;
using namespace teleop::session;

namespace {

SessionConfig quick_config(std::uint64_t seed = 1) {
  SessionConfig c;
  c.duration_s = 10.0;
  c.leader_to_follower = *netsim::NetworkPreset::named("wifi", seed);
  c.follower_to_leader = *netsim::NetworkPreset::named("wifi", seed + 100);
  c.follower.seed = seed + 200;
  c.script.seed = seed + 300;
  return c;
}

SessionConfig identity_config() {
  SessionConfig c;
  c.duration_s = 5.0;
  c.skip_calibration = true;
  c.follower.reaction_delay_ms = 0.0;
  c.follower.time_constant_ms = 0.0;
  c.follower.offset = Vec3::Zero();
  c.follower.offset_rotation = Vec3::Zero();
  c.follower.noise_pos_sd = 0.0;
  c.follower.noise_rot_sd_deg = 0.0;
  return c;
}

std::vector<ForceSample> constant_force(double newtons, std::uint64_t until_us,
                                        std::uint64_t from_us = 0) {
  std::vector<ForceSample> out;
  for (std::uint64_t t = from_us; t <= until_us; t += 10000) {
    out.push_back({t, Vec3(0, newtons, 0), Vec3(0.001 * static_cast<double>(t / 10000), 0, 0)});
  }
  return out;
}

}  // namespace

TEST(MinJerk, Profile) {
  EXPECT_DOUBLE_EQ(min_jerk(0.0), 0.0);
  EXPECT_DOUBLE_EQ(min_jerk(1.0), 1.0);
  EXPECT_DOUBLE_EQ(min_jerk(0.5), 0.5);
  EXPECT_DOUBLE_EQ(min_jerk(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(min_jerk(2.0), 1.0);
  // 10 s^3 - 15 s^4 + 6 s^5 at s = 0.25
  EXPECT_NEAR(min_jerk(0.25), 0.103515625, 1e-15);
}

TEST(FollowerStep, ZeroTimeConstantCopiesTarget) {
  FollowerParams p;
  p.time_constant_ms = 0.0;
  Pose leader{0, Vec3(0.1, 0.2, 0.3), Quat(Eigen::AngleAxisd(0.4, Vec3::UnitZ()))};
  const Vec3 offset(0.01, -0.02, 0.005);
  const Quat rot(Eigen::AngleAxisd(0.1, Vec3::UnitX()));
  const Pose next = follower_step(p, Pose{}, leader, offset, rot, 0.01);
  EXPECT_EQ(next.position, leader.position + offset);
  EXPECT_TRUE(same_quat(next.orientation, leader.orientation * rot));
}

TEST(FollowerStep, LagMatchesClosedForm) {
  FollowerParams p;
  p.time_constant_ms = 150.0;
  const double dt = 0.01;
  const Pose leader{0, Vec3(0.05, 0.1, -0.02), Quat::Identity()};
  const Vec3 offset(0.02, 0.0, 0.0);
  const Vec3 target = leader.position + offset;
  Pose s{0, Vec3(-0.1, 0.3, 0.2), Quat::Identity()};
  const Vec3 e0 = s.position - target;
  for (int k = 1; k <= 300; ++k) {
    s = follower_step(p, s, leader, offset, Quat::Identity(), dt);
    const Vec3 expected = e0 * std::exp(-k * dt / 0.15);
    ASSERT_NEAR((s.position - target - expected).norm(), 0.0, 1e-12) << k;
  }
  // 20 time constants: e0 * exp(-20) < 1e-9 m.
  EXPECT_LT((s.position - target).norm(), 1e-9);
}

TEST(FollowerStep, AlignedStartStaysOnOffset) {
  FollowerParams p;
  const Pose leader{0, Vec3(0.0, 0.2, 0.0), Quat::Identity()};
  const Vec3 offset(0.0, 0.01, 0.0);
  Pose s{0, leader.position + offset, Quat::Identity()};
  for (int k = 0; k < 150; ++k) s = follower_step(p, s, leader, offset, Quat::Identity(), 0.01);
  EXPECT_LT((s.position - (leader.position + offset)).norm(), 1e-9);
}

TEST(FollowerModel, SampledOffsetWithinRange) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    FollowerParams p;
    p.seed = seed;
    FollowerModel f(p);
    EXPECT_GE(f.offset().norm(), p.offset_min - 1e-12);
    EXPECT_LE(f.offset().norm(), p.offset_max + 1e-12);
    const double deg = analytics::rotation_angle(f.offset_rotation()) * analytics::kDegreesPerRadian;
    EXPECT_GE(deg, p.offset_rot_min_deg - 1e-9);
    EXPECT_LE(deg, p.offset_rot_max_deg + 1e-9);
  }
}

TEST(FollowerModel, ReactionDelayHoldsState) {
  FollowerParams p;
  p.reaction_delay_ms = 250.0;
  p.time_constant_ms = 0.0;
  p.offset = Vec3::Zero();
  p.offset_rotation = Vec3::Zero();
  FollowerModel f(p);
  f.reset_state(Pose{0, Vec3(1, 1, 1), Quat::Identity()});
  f.observe(Pose{0, Vec3(0, 0, 0), Quat::Identity()}, 0);
  f.step(240000, 0.01);
  EXPECT_EQ(f.state().position, Vec3(1, 1, 1));
  f.step(250000, 0.01);
  EXPECT_EQ(f.state().position, Vec3(0, 0, 0));
}

TEST(Calibration, CapturesAfterHold) {
  CalibrationProcedure proc(5.0, 300000, 30000000);
  std::optional<CalibrationCapture> got;
  for (const auto& s : constant_force(6.0, 400000)) {
    got = proc.feed(s.t_us, s.force, s.tip);
    if (got) break;
  }
  ASSERT_TRUE(got);
  EXPECT_EQ(got->step, 1);
  EXPECT_EQ(got->t_us, 300000u);
  EXPECT_EQ(proc.step(), 2);
}

TEST(Calibration, BelowThresholdTimesOut) {
  CalibrationProcedure proc(5.0, 300000, 30000000);
  const auto stream = constant_force(4.0, 31000000);
  try {
    for (const auto& s : stream) EXPECT_FALSE(proc.feed(s.t_us, s.force, s.tip));
    FAIL() << "no timeout";
  } catch (const SessionError& e) {
    EXPECT_EQ(e.code(), SessionErrc::CalibrationTimeout);
    EXPECT_STREQ(e.what(), "CalibrationTimeout: step 1 not completed within 30 s");
  }
}

TEST(Calibration, DipRestartsHoldTimer) {
  // 6 N throughout except 2 N at 150 and 160 ms: the hold restarts at 170 ms.
  CalibrationProcedure proc(5.0, 300000, 30000000);
  std::optional<CalibrationCapture> got;
  for (std::uint64_t t = 0; t <= 1000000 && !got; t += 10000) {
    const double f = (t == 150000 || t == 160000) ? 2.0 : 6.0;
    got = proc.feed(t, Vec3(f, 0, 0), Vec3::Zero());
  }
  ASSERT_TRUE(got);
  EXPECT_EQ(got->t_us, 470000u);
}

TEST(Calibration, NeedsReleaseBetweenSteps) {
  CalibrationProcedure proc(5.0, 300000, 30000000);
  int captures = 0;
  for (const auto& s : constant_force(6.0, 2000000)) captures += proc.feed(s.t_us, s.force, s.tip) ? 1 : 0;
  EXPECT_EQ(captures, 1);
  EXPECT_EQ(proc.step(), 2);
}

TEST(Calibration, FourPressesFitTheLandmarks) {
  const geometry::CalibrationSet truth{Vec3(0.0, 0.22, 0.0), Vec3(0.0, 0.0, -0.16),
                                       Vec3(0.0, 0.0, 0.16), Vec3(0.1, 0.0, 0.28)};
  const std::array<Vec3, 4> pts = {truth.xiphoid, truth.left, truth.right, truth.bed};
  std::vector<ForceSample> stream;
  std::uint64_t t = 0;
  for (const Vec3& p : pts) {
    for (int i = 0; i < 20; ++i, t += 10000) stream.push_back({t, Vec3::Zero(), p});
    for (int i = 0; i < 40; ++i, t += 10000) stream.push_back({t, Vec3(0, 8.0, 0), p});
  }
  CalibrationProcedure proc(5.0, 300000, 30000000);
  const auto fitted = run_calibration(proc, stream);
  const auto expected = geometry::fit_ellipsoid(truth);
  EXPECT_EQ(fitted.center, expected.center);
  EXPECT_EQ(fitted.a, expected.a);
  EXPECT_EQ(fitted.b, expected.b);

  CalibrationProcedure short_proc(5.0, 300000, 30000000);
  const std::span<const ForceSample> half(stream.data(), 120);
  EXPECT_THROW(run_calibration(short_proc, half), SessionError);
}

TEST(PatientModel, ReactionForceSigns) {
  PatientModel p;
  EXPECT_EQ(p.reaction_force(Vec3(0, 0.5, 0)), Vec3::Zero());
  const Vec3 pressed = p.reaction_force(Vec3(0, 0.21, 0));
  EXPECT_GT(pressed.y(), 0.0);
  EXPECT_NEAR(pressed.norm(), p.tissue_stiffness * 0.01, 1e-9);
  for (int step = 1; step <= 4; ++step) {
    const auto [point, normal] = p.landmark(step);
    EXPECT_NEAR(normal.norm(), 1.0, 1e-12);
    EXPECT_EQ(p.reaction_force(point + 0.01 * normal), Vec3::Zero());
  }
}

TEST(SessionConfig, Validation) {
  SessionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tick_rate_hz = 5.0;
  try {
    c.validate();
    FAIL();
  } catch (const SessionError& e) {
    EXPECT_EQ(e.code(), SessionErrc::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("tick_rate"), std::string::npos);
  }
  SessionConfig d;
  d.duration_s = -1.0;
  EXPECT_THROW(d.validate(), SessionError);
  SessionConfig e;
  e.follower.time_constant_ms = -1.0;
  EXPECT_THROW(e.validate(), SessionError);
  EXPECT_THROW(Session{c}, SessionError);
}

TEST(Session, SkipCalibrationRecordCount) {
  SessionConfig c = quick_config();
  c.skip_calibration = true;
  const SessionResult r = run_scripted_session(c);
  ASSERT_TRUE(r.ok) << r.diagnostic;
  EXPECT_EQ(r.records.size(), 1000u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    EXPECT_EQ(r.records[i].t_us, i * 10000u);
    EXPECT_NE(r.records[i].phase, Phase::AwaitingCalibration);
  }
}

TEST(Session, IdealIdentityFollowerMatchesLeader) {
  const SessionResult r = run_scripted_session(identity_config());
  ASSERT_TRUE(r.ok) << r.diagnostic;
  ASSERT_FALSE(r.records.empty());
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.follower.position, rec.leader.position) << rec.t_us;
    EXPECT_TRUE(same_quat(rec.follower.orientation, rec.leader.orientation)) << rec.t_us;
  }
  const auto report = analytics::tracking_report(r.records);
  EXPECT_EQ(report.rmse_pos_mm, 0.0);
  EXPECT_EQ(report.rmse_ang_deg, 0.0);
}

TEST(Session, ConstantOffsetCancels) {
  SessionConfig c = identity_config();
  c.follower.offset = Vec3(0.012, -0.007, 0.02);
  c.follower.offset_rotation = Vec3(0.0, 0.0, 8.0 / analytics::kDegreesPerRadian);
  const SessionResult r = run_scripted_session(c);
  ASSERT_TRUE(r.ok) << r.diagnostic;
  const auto report = analytics::tracking_report(r.records);
  EXPECT_NEAR(report.rmse_pos_mm, c.follower.offset->norm() * 1000.0, 1e-9);
  EXPECT_LT(report.nrmse_pos_mm, 1e-9);
  EXPECT_NEAR(report.rmse_ang_deg, 8.0, 1e-9);
  EXPECT_LT(report.nrmse_ang_deg, 1e-6);
}

TEST(Session, FullScriptedRunWithCalibration) {
  const SessionResult r = run_scripted_session(quick_config(3));
  ASSERT_TRUE(r.ok) << r.diagnostic;
  ASSERT_TRUE(r.ellipsoid);
  ASSERT_EQ(r.captures.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(r.captures[static_cast<std::size_t>(i)].step, i + 1);

  // The fit lands near the true body.
  const PatientModel truth;
  EXPECT_LT((r.ellipsoid->center - truth.body.center).norm(), 0.03);
  EXPECT_NEAR(r.ellipsoid->a, truth.body.a, 0.03);
  EXPECT_NEAR(r.ellipsoid->b, truth.body.b, 0.03);

  // No haptic force is rendered before the ellipsoid exists.
  bool fitted = false;
  for (const auto& rec : r.records) {
    if (rec.phase == Phase::Scanning) fitted = true;
    if (!fitted) {
      EXPECT_EQ(rec.force, Vec3::Zero()) << rec.t_us;
    }
    EXPECT_TRUE(rec.force.allFinite());
  }
  EXPECT_TRUE(fitted);

  const auto report = analytics::tracking_report(r.records);
  EXPECT_GT(report.rmse_pos_mm, 15.0);
  EXPECT_LT(report.rmse_pos_mm, 55.0);
  EXPECT_LT(report.nrmse_pos_mm, report.rmse_pos_mm);
}

TEST(Session, Deterministic) {
  const SessionResult a = run_scripted_session(quick_config(4));
  const SessionResult b = run_scripted_session(quick_config(4));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) ASSERT_EQ(a.records[i], b.records[i]) << i;
  EXPECT_EQ(a.header_fields, b.header_fields);
  const SessionResult c = run_scripted_session(quick_config(5));
  EXPECT_NE(a.records.back().follower.position, c.records.back().follower.position);
}

TEST(Session, TimestampsStrictlyIncrease) {
  const SessionResult r = run_scripted_session(quick_config(6));
  for (std::size_t i = 1; i < r.records.size(); ++i) {
    ASSERT_GT(r.records[i].t_us, r.records[i - 1].t_us);
  }
}

TEST(Session, FollowerIsCausal) {
  // Two live sessions share every seed; the leader input differs only from
  // tick 300 on. The follower cannot react before the reaction delay.
  SessionConfig c = quick_config(7);
  c.skip_calibration = true;
  auto run = [&](bool diverge) {
    Session s(c, Session::LeaderMode::Live);
    s.start();
    for (int i = 0; i < 400; ++i) {
      const double x = (diverge && i >= 300) ? 0.05 : 0.0;
      s.set_live_leader_pose(Pose{0, Vec3(x, 0.21, 0.05), Quat::Identity()});
      s.tick();
    }
    return s.records();
  };
  const auto a = run(false);
  const auto b = run(true);
  ASSERT_EQ(a.size(), b.size());
  const std::size_t reaction_ticks = 25;
  for (std::size_t i = 0; i < 300 + reaction_ticks; ++i) {
    ASSERT_EQ(a[i].follower.position, b[i].follower.position) << i;
  }
  EXPECT_NE(a.back().follower.position, b.back().follower.position);
}

TEST(Session, ControlCommands) {
  SessionConfig c = quick_config(8);
  c.skip_calibration = true;
  Session s(c, Session::LeaderMode::Live);
  EXPECT_EQ(s.phase(), Phase::Idle);
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("FREEZE")));
  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("START")));
  EXPECT_EQ(s.phase(), Phase::Scanning);
  EXPECT_TRUE(s.ellipsoid());
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("START")));
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("STEP")));
  s.tick();

  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("GAINS kp=300 kd=1,2,3")));
  EXPECT_EQ(s.config().contact.kp, Vec3(300, 300, 300));
  EXPECT_EQ(s.config().contact.kd, Vec3(1, 2, 3));
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("GAINS kp=-1")));
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("GAINS gain=1")));
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("JUMP")));
  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("FREEZE")));
  s.tick();
  EXPECT_EQ(s.phase(), Phase::Frozen);
  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("UNFREEZE")));
  s.tick();
  EXPECT_EQ(s.phase(), Phase::Scanning);
  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("STOP")));
  EXPECT_TRUE(s.ended());
  EXPECT_FALSE(s.apply_control(*protocol::ControlCommand::parse("START")));
}

TEST(Session, ManualStepAdvancesCalibration) {
  Session s(quick_config(9), Session::LeaderMode::Live);
  s.start();
  EXPECT_EQ(s.phase(), Phase::AwaitingCalibration);
  EXPECT_EQ(s.calibration_step(), 1);
  for (int i = 0; i < 5; ++i) s.tick();
  EXPECT_TRUE(s.apply_control(*protocol::ControlCommand::parse("STEP")));
  EXPECT_EQ(s.calibration_step(), 2);
  ASSERT_EQ(s.captures().size(), 1u);
  EXPECT_EQ(s.captures()[0].step, 1);
}

TEST(VelocityFilterTest, ConstantVelocityConverges) {
  VelocityFilter f(20.0, 0.01);
  Vec3 v;
  for (int i = 0; i < 200; ++i) v = f.update(Vec3(0.05 * i * 0.01, 0, 0));
  EXPECT_NEAR(v.x(), 0.05, 1e-9);
}
