#include <gtest/gtest.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"
#include "teleop/trajectory.hpp"

using namespace teleop;
using teleop::testing::Rng;

namespace {

TrajectoryRecord random_record(Rng& r, std::uint64_t t) {
  TrajectoryRecord rec;
  rec.t_us = t;
  rec.leader = Pose{t, Vec3(r.normal(), r.normal(), r.normal()), r.unit_quat()};
  rec.follower = Pose{t, Vec3(r.normal(1e-9), r.normal(1e6), r.normal()), r.unit_quat()};
  rec.force = Vec3(r.normal(5), r.normal(5), r.normal(5));
  switch (r.gen() % 4) {
    case 0:
      rec.phase = Phase::AwaitingCalibration;
      rec.calibration_step = 1 + static_cast<int>(r.gen() % 4);
      break;
    case 1: rec.phase = Phase::Frozen; break;
    case 2: rec.phase = Phase::Ended; break;
    default: rec.phase = Phase::Scanning; break;
  }
  return rec;
}

TrajectoryLog parse(const std::string& text) {
  std::istringstream in(text);
  return read_log(in);
}

const std::string kHead =
    "# teleop-log v1 config_hash=0123456789abcdef seed=1\n"
    "# columns t_us lpx lpy lpz lqw lqx lqy lqz fpx fpy fpz fqw fqx fqy fqz fx fy fz phase\n";

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(-2.0), "-2");
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double v = teleop::testing::wild_double(r);
    const std::string text = format_double(v);
    double back = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), back);
    EXPECT_EQ(back, v) << text;
  }
}

TEST(PhaseTag, Names) {
  EXPECT_EQ(phase_tag(Phase::AwaitingCalibration, 3), "CAL3");
  EXPECT_EQ(phase_tag(Phase::Scanning, 0), "SCAN");
  EXPECT_EQ(phase_tag(Phase::Frozen, 0), "FROZEN");
  EXPECT_EQ(phase_tag(Phase::Ended, 0), "END");
}

TEST(TrajectoryLog, RoundTrip) {
  Rng r(8);
  std::vector<TrajectoryRecord> records;
  for (std::uint64_t i = 0; i < 500; ++i) records.push_back(random_record(r, i * 10000));
  LogHeader h;
  h.config_hash = "0123456789abcdef";
  h.fields = {{"seed", "42"}, {"preset", "wifi"}};
  geometry::EllipsoidModel m;
  m.center = Vec3(0.01, 0.11, -0.02);
  m.a = 0.16;
  m.b = 0.11;
  m.c = 10.0;
  h.ellipsoid = m;

  std::ostringstream out;
  write_log(out, h, records);
  const TrajectoryLog log = parse(out.str());
  EXPECT_EQ(log.header.config_hash, h.config_hash);
  EXPECT_EQ(log.header.fields, h.fields);
  ASSERT_TRUE(log.header.ellipsoid);
  EXPECT_EQ(log.header.ellipsoid->center, m.center);
  EXPECT_EQ(log.header.ellipsoid->a, m.a);
  ASSERT_EQ(log.records.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(log.records[i], records[i]) << i;

  std::ostringstream again;
  write_log(again, log.header, log.records);
  EXPECT_EQ(again.str(), out.str());
}

TEST(TrajectoryLog, ReadsFixture) {
  std::ifstream in(teleop::testing::fixture_path("scan01.log"));
  ASSERT_TRUE(in);
  const TrajectoryLog log = read_log(in);
  EXPECT_EQ(log.header.config_hash, "5ca1ab1e0ddba11f");
  EXPECT_EQ(log.header.fields.at("scan"), "1");
  EXPECT_EQ(log.records.size(), 213u);
  EXPECT_EQ(log.records.front().phase, Phase::AwaitingCalibration);
  EXPECT_EQ(log.records.front().calibration_step, 1);
}

TEST(TrajectoryLog, ErrorsCarryLineNumbers) {
  const std::string row = "0 0 0 0 1 0 0 0 0 0 0 1 0 0 0 0 0 0 SCAN\n";
  EXPECT_NO_THROW(parse(kHead + row));

  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse(text);
    } catch (const LogError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of(kHead + row + "0 0 0 SCAN\n"), 4u);
  EXPECT_EQ(line_of(kHead + row + "10 0 0 0 1 0 0 0 0 0 0 1 0 0 0 0 0 0 WALK\n"), 4u);
  EXPECT_EQ(line_of(kHead + "x 0 0 0 1 0 0 0 0 0 0 1 0 0 0 0 0 0 SCAN\n"), 3u);
  EXPECT_EQ(line_of(kHead + "0 0 0 0 1 0 0 0 0 0 0 1 0 0 0 0 0 nan SCAN\n"), 3u);
  EXPECT_EQ(line_of("# something else\n"), 1u);
  EXPECT_EQ(line_of(""), 1u);
}
