#pragma once

// Trajectory log: one text record per tick.
//
//   # teleop-log v1 config_hash=<16 hex> seed=<u64> ... (key=value)
//   # ellipsoid cx=.. cy=.. cz=.. a=.. b=.. c=..          (once fitted)
//   # columns t_us lpx lpy lpz lqw lqx lqy lqz fpx fpy fpz fqw fqx fqy fqz fx fy fz phase
//   <t_us> <7 leader pose> <7 follower pose> <3 force> <phase tag>
//
// Phase tags: CAL1..CAL4, SCAN, FROZEN, END. Numbers use the shortest
// round-trip representation, so a log read back reproduces every double.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "teleop/geometry.hpp"
#include "teleop/pose.hpp"

namespace teleop {

enum class Phase : std::uint8_t { Idle, AwaitingCalibration, Scanning, Frozen, Ended };

const char* to_string(Phase p);

struct TrajectoryRecord {
  std::uint64_t t_us = 0;
  Pose leader;
  Pose follower;
  Vec3 force = Vec3::Zero();
  Phase phase = Phase::Scanning;
  int calibration_step = 0;  // 1-4 while AwaitingCalibration
};

bool operator==(const TrajectoryRecord& a, const TrajectoryRecord& b);

/// "CAL1".."CAL4", "SCAN", "FROZEN", "END", "IDLE".
std::string phase_tag(Phase p, int step);

struct LogHeader {
  std::string config_hash;
  std::map<std::string, std::string> fields;  // seeds, preset, tick rate, scan id...
  std::optional<geometry::EllipsoidModel> ellipsoid;
};

struct TrajectoryLog {
  LogHeader header;
  std::vector<TrajectoryRecord> records;
};

class LogError : public std::runtime_error {
 public:
  LogError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

void write_record(std::ostream& out, const TrajectoryRecord& r);
void write_log(std::ostream& out, const LogHeader& header,
               std::span<const TrajectoryRecord> records);

/// Throws LogError with the offending line number.
TrajectoryLog read_log(std::istream& in);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace teleop
