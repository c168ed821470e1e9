#include "teleop/trajectory.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

namespace teleop {
namespace {

constexpr std::string_view kMagicLine = "# teleop-log v1";
constexpr std::string_view kColumns =
    "# columns t_us lpx lpy lpz lqw lqx lqy lqz fpx fpy fpz fqw fqx fqy fqz fx fy fz phase";

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

void write_pose(std::ostream& out, const Pose& p) {
  out << ' ' << format_double(p.position.x()) << ' ' << format_double(p.position.y()) << ' '
      << format_double(p.position.z()) << ' ' << format_double(p.orientation.w()) << ' '
      << format_double(p.orientation.x()) << ' ' << format_double(p.orientation.y()) << ' '
      << format_double(p.orientation.z());
}

std::map<std::string, std::string> parse_fields(std::span<const std::string_view> tokens,
                                                std::size_t line) {
  std::map<std::string, std::string> fields;
  for (std::string_view tok : tokens) {
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw LogError(line, "malformed header field '" + std::string(tok) + "'");
    }
    fields.emplace(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
  }
  return fields;
}

bool parse_phase(std::string_view tag, Phase& phase, int& step) {
  step = 0;
  if (tag == "SCAN") {
    phase = Phase::Scanning;
  } else if (tag == "FROZEN") {
    phase = Phase::Frozen;
  } else if (tag == "END") {
    phase = Phase::Ended;
  } else if (tag == "IDLE") {
    phase = Phase::Idle;
  } else if (tag.size() == 4 && tag.substr(0, 3) == "CAL" && tag[3] >= '1' && tag[3] <= '4') {
    phase = Phase::AwaitingCalibration;
    step = tag[3] - '0';
  } else {
    return false;
  }
  return true;
}

}  // namespace

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::AwaitingCalibration: return "AwaitingCalibration";
    case Phase::Scanning: return "Scanning";
    case Phase::Frozen: return "Frozen";
    case Phase::Ended: return "Ended";
  }
  return "?";
}

std::string phase_tag(Phase p, int step) {
  switch (p) {
    case Phase::Idle: return "IDLE";
    case Phase::AwaitingCalibration: return "CAL" + std::to_string(step);
    case Phase::Scanning: return "SCAN";
    case Phase::Frozen: return "FROZEN";
    case Phase::Ended: return "END";
  }
  return "?";
}

bool operator==(const TrajectoryRecord& a, const TrajectoryRecord& b) {
  return a.t_us == b.t_us && a.leader == b.leader && a.follower == b.follower &&
         a.force == b.force && a.phase == b.phase && a.calibration_step == b.calibration_step;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

void write_record(std::ostream& out, const TrajectoryRecord& r) {
  out << r.t_us;
  write_pose(out, r.leader);
  write_pose(out, r.follower);
  out << ' ' << format_double(r.force.x()) << ' ' << format_double(r.force.y()) << ' '
      << format_double(r.force.z()) << ' ' << phase_tag(r.phase, r.calibration_step) << '\n';
}

void write_log(std::ostream& out, const LogHeader& header,
               std::span<const TrajectoryRecord> records) {
  out << kMagicLine << " config_hash=" << header.config_hash;
  for (const auto& [k, v] : header.fields) out << ' ' << k << '=' << v;
  out << '\n';
  if (header.ellipsoid) {
    const auto& m = *header.ellipsoid;
    out << "# ellipsoid cx=" << format_double(m.center.x()) << " cy=" << format_double(m.center.y())
        << " cz=" << format_double(m.center.z()) << " a=" << format_double(m.a)
        << " b=" << format_double(m.b) << " c=" << format_double(m.c) << '\n';
  }
  out << kColumns << '\n';
  for (const auto& r : records) write_record(out, r);
}

TrajectoryLog read_log(std::istream& in) {
  TrajectoryLog log;
  std::string line;
  std::size_t lineno = 0;
  bool have_magic = false;

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (sv.empty() || sv.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    if (sv.front() == '#') {
      if (!have_magic) {
        if (sv.substr(0, kMagicLine.size()) != kMagicLine) {
          throw LogError(lineno, "missing '# teleop-log v1' header");
        }
        have_magic = true;
        auto tokens = split_ws(sv.substr(kMagicLine.size()));
        auto fields = parse_fields(tokens, lineno);
        if (auto it = fields.find("config_hash"); it != fields.end()) {
          log.header.config_hash = it->second;
          fields.erase(it);
        }
        log.header.fields = std::move(fields);
        continue;
      }
      auto tokens = split_ws(sv.substr(1));
      if (!tokens.empty() && tokens.front() == "ellipsoid") {
        auto f = parse_fields(std::span(tokens).subspan(1), lineno);
        geometry::EllipsoidModel m;
        std::array<double, 6> v{};
        const std::array<const char*, 6> keys{"cx", "cy", "cz", "a", "b", "c"};
        for (std::size_t i = 0; i < keys.size(); ++i) {
          auto it = f.find(keys[i]);
          if (it == f.end() || !parse_double(it->second, v[i])) {
            throw LogError(lineno, std::string("ellipsoid line missing or bad '") + keys[i] + "'");
          }
        }
        m.center = Vec3(v[0], v[1], v[2]);
        m.a = v[3];
        m.b = v[4];
        m.c = v[5];
        if (!m.valid()) throw LogError(lineno, "ellipsoid parameters are invalid");
        log.header.ellipsoid = m;
      }
      continue;
    }

    if (!have_magic) throw LogError(lineno, "missing '# teleop-log v1' header");

    auto tokens = split_ws(sv);
    if (tokens.size() != 19) {
      throw LogError(lineno, "expected 19 columns, found " + std::to_string(tokens.size()));
    }
    TrajectoryRecord r;
    if (!parse_u64(tokens[0], r.t_us)) throw LogError(lineno, "bad timestamp");
    std::array<double, 17> v{};
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!parse_double(tokens[i + 1], v[i]) || !std::isfinite(v[i])) {
        throw LogError(lineno, "bad number in column " + std::to_string(i + 2));
      }
    }
    r.leader = Pose{r.t_us, Vec3(v[0], v[1], v[2]), Quat(v[3], v[4], v[5], v[6])};
    r.follower = Pose{r.t_us, Vec3(v[7], v[8], v[9]), Quat(v[10], v[11], v[12], v[13])};
    r.force = Vec3(v[14], v[15], v[16]);
    if (!parse_phase(tokens[18], r.phase, r.calibration_step)) {
      throw LogError(lineno, "unknown phase tag '" + std::string(tokens[18]) + "'");
    }
    if (!log.records.empty() && r.t_us <= log.records.back().t_us) {
      throw LogError(lineno, "timestamps must be strictly increasing");
    }
    log.records.push_back(r);
  }
  if (!have_magic) throw LogError(std::max<std::size_t>(lineno, 1), "empty log");
  return log;
}

}  // namespace teleop
