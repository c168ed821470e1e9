#include "teleop/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "teleop/seeds.hpp"

namespace teleop::config {
namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw std::invalid_argument("expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

int to_int(const std::string& v) {
  int out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw std::invalid_argument("expected an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& v) {
  std::vector<double> out;
  std::istringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(to_double(trim(part)));
  return out;
}

Vec3 to_vec3(const std::string& v) {
  const auto l = to_list(v);
  if (l.size() != 3) throw std::invalid_argument("expected x,y,z, got '" + v + "'");
  return {l[0], l[1], l[2]};
}

/// One value for all axes, or x,y,z.
Vec3 to_gain(const std::string& v) {
  const auto l = to_list(v);
  if (l.size() == 1) return Vec3::Constant(l[0]);
  if (l.size() == 3) return {l[0], l[1], l[2]};
  throw std::invalid_argument("expected one value or x,y,z, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"tick_rate", [](RunConfig& c, const std::string& v) { c.session.tick_rate_hz = to_double(v); }},
      {"duration_s", [](RunConfig& c, const std::string& v) { c.session.duration_s = to_double(v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"preset", [](RunConfig& c, const std::string& v) { c.preset = v; }},
      {"net.mean_ms", [](RunConfig& c, const std::string& v) { c.net.mean_ms = to_double(v); }},
      {"net.jitter_ms", [](RunConfig& c, const std::string& v) { c.net.jitter_ms = to_double(v); }},
      {"net.drop_prob", [](RunConfig& c, const std::string& v) { c.net.drop_prob = to_double(v); }},
      {"net.allow_reorder",
       [](RunConfig& c, const std::string& v) { c.net.allow_reorder = to_bool(v); }},
      {"net.seed_l2f", [](RunConfig& c, const std::string& v) { c.net.seed_l2f = to_u64(v); }},
      {"net.seed_f2l", [](RunConfig& c, const std::string& v) { c.net.seed_f2l = to_u64(v); }},
      {"follower.reaction_delay_ms",
       [](RunConfig& c, const std::string& v) { c.session.follower.reaction_delay_ms = to_double(v); }},
      {"follower.time_constant_ms",
       [](RunConfig& c, const std::string& v) { c.session.follower.time_constant_ms = to_double(v); }},
      {"follower.offset_mm",
       [](RunConfig& c, const std::string& v) {
         if (v == "random") {
           c.session.follower.offset.reset();
         } else {
           c.session.follower.offset = to_vec3(v) / 1000.0;
         }
       }},
      {"follower.offset_rot_deg",
       [](RunConfig& c, const std::string& v) {
         if (v == "random") {
           c.session.follower.offset_rotation.reset();
         } else {
           c.session.follower.offset_rotation = to_vec3(v) * kDegToRad;
         }
       }},
      {"follower.noise_mm",
       [](RunConfig& c, const std::string& v) { c.session.follower.noise_pos_sd = to_double(v) / 1000.0; }},
      {"follower.noise_deg",
       [](RunConfig& c, const std::string& v) { c.session.follower.noise_rot_sd_deg = to_double(v); }},
      {"follower.seed", [](RunConfig& c, const std::string& v) { c.follower_seed = to_u64(v); }},
      {"contact.kp", [](RunConfig& c, const std::string& v) { c.session.contact.kp = to_gain(v); }},
      {"contact.kd", [](RunConfig& c, const std::string& v) { c.session.contact.kd = to_gain(v); }},
      {"calibration.force_threshold_n",
       [](RunConfig& c, const std::string& v) {
         c.session.calibration_force_threshold_n = to_double(v);
       }},
      {"calibration.hold_ms",
       [](RunConfig& c, const std::string& v) { c.session.threshold_hold_ms = to_double(v); }},
      {"calibration.step_timeout_s",
       [](RunConfig& c, const std::string& v) { c.session.calibration_step_timeout_s = to_double(v); }},
      {"calibration.skip",
       [](RunConfig& c, const std::string& v) { c.session.skip_calibration = to_bool(v); }},
      {"ellipsoid.c_m",
       [](RunConfig& c, const std::string& v) { c.session.longitudinal_semi_axis_m = to_double(v); }},
      {"haptics.velocity_cutoff_hz",
       [](RunConfig& c, const std::string& v) { c.session.velocity_cutoff_hz = to_double(v); }},
      {"tip_offset_mm",
       [](RunConfig& c, const std::string& v) { c.session.tip_offset = to_vec3(v) / 1000.0; }},
      {"patient.center_m",
       [](RunConfig& c, const std::string& v) { c.session.patient.body.center = to_vec3(v); }},
      {"patient.a_m", [](RunConfig& c, const std::string& v) { c.session.patient.body.a = to_double(v); }},
      {"patient.b_m", [](RunConfig& c, const std::string& v) { c.session.patient.body.b = to_double(v); }},
      {"patient.c_m", [](RunConfig& c, const std::string& v) { c.session.patient.body.c = to_double(v); }},
      {"patient.bed_y_m",
       [](RunConfig& c, const std::string& v) { c.session.patient.bed_y = to_double(v); }},
      {"patient.tissue_stiffness",
       [](RunConfig& c, const std::string& v) { c.session.patient.tissue_stiffness = to_double(v); }},
      {"patient.bed_stiffness",
       [](RunConfig& c, const std::string& v) { c.session.patient.bed_stiffness = to_double(v); }},
      {"script.seed", [](RunConfig& c, const std::string& v) { c.script_seed = to_u64(v); }},
      {"script.speed_mps",
       [](RunConfig& c, const std::string& v) { c.session.script.speed_mps = to_double(v); }},
      {"script.depth_mm",
       [](RunConfig& c, const std::string& v) { c.session.script.depth_m = to_double(v) / 1000.0; }},
      {"script.freezes", [](RunConfig& c, const std::string& v) { c.session.script.freezes = to_int(v); }},
      {"script.freeze_s",
       [](RunConfig& c, const std::string& v) { c.session.script.freeze_s = to_double(v); }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
      {"summary", [](RunConfig& c, const std::string& v) { c.summary = v; }},
  };
  return table;
}

std::string vec_text(const Vec3& v) {
  return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
}

}  // namespace

session::SessionConfig RunConfig::resolve() const {
  auto l2f = netsim::NetworkPreset::named(preset, net.seed_l2f.value_or(derive_seed(seed, "net.l2f")));
  auto f2l = netsim::NetworkPreset::named(preset, net.seed_f2l.value_or(derive_seed(seed, "net.f2l")));
  if (!l2f || !f2l) throw ConfigError("unknown preset '" + preset + "' (ideal, wifi, 5g)");
  for (netsim::NetworkPreset* p : {&*l2f, &*f2l}) {
    if (net.mean_ms) p->mean_one_way_delay_ms = *net.mean_ms;
    if (net.jitter_ms) p->jitter_sd_ms = *net.jitter_ms;
    if (net.drop_prob) p->drop_prob = *net.drop_prob;
    if (net.allow_reorder) p->allow_reorder = *net.allow_reorder;
  }
  session::SessionConfig out = session;
  out.leader_to_follower = *l2f;
  out.follower_to_leader = *f2l;
  out.follower.seed = follower_seed.value_or(derive_seed(seed, "follower"));
  out.script.seed = script_seed.value_or(derive_seed(seed, "script"));
  out.validate();
  return out;
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + why);
    };
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail("unknown key '" + key + "'");
    if (!seen.insert(key).second) fail("repeated key '" + key + "'");
    if (value.empty()) fail("missing value for '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      fail(key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

std::string canonical_text(const session::SessionConfig& c) {
  std::ostringstream os;
  auto kv = [&os](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  auto num = [&kv](const char* k, double v) { kv(k, format_double(v)); };
  num("tick_rate", c.tick_rate_hz);
  num("duration_s", c.duration_s);
  kv("preset", c.leader_to_follower.name);
  for (const auto* p : {&c.leader_to_follower, &c.follower_to_leader}) {
    const char* dir = p == &c.leader_to_follower ? "l2f" : "f2l";
    os << "net." << dir << " = " << format_double(p->mean_one_way_delay_ms) << ','
       << format_double(p->jitter_sd_ms) << ',' << format_double(p->drop_prob) << ','
       << (p->allow_reorder ? "reorder" : "ordered") << '\n';
  }
  num("follower.reaction_delay_ms", c.follower.reaction_delay_ms);
  num("follower.time_constant_ms", c.follower.time_constant_ms);
  kv("follower.offset_m", c.follower.offset ? vec_text(*c.follower.offset) : "random");
  kv("follower.offset_rot_rad",
     c.follower.offset_rotation ? vec_text(*c.follower.offset_rotation) : "random");
  num("follower.noise_m", c.follower.noise_pos_sd);
  num("follower.noise_deg", c.follower.noise_rot_sd_deg);
  kv("contact.kp", vec_text(c.contact.kp));
  kv("contact.kd", vec_text(c.contact.kd));
  num("calibration.force_threshold_n", c.calibration_force_threshold_n);
  num("calibration.hold_ms", c.threshold_hold_ms);
  num("calibration.step_timeout_s", c.calibration_step_timeout_s);
  kv("calibration.skip", c.skip_calibration ? "true" : "false");
  num("ellipsoid.c_m", c.longitudinal_semi_axis_m);
  num("haptics.velocity_cutoff_hz", c.velocity_cutoff_hz);
  kv("tip_offset_m", vec_text(c.tip_offset));
  kv("patient.center_m", vec_text(c.patient.body.center));
  num("patient.a_m", c.patient.body.a);
  num("patient.b_m", c.patient.body.b);
  num("patient.c_m", c.patient.body.c);
  num("patient.bed_y_m", c.patient.bed_y);
  num("patient.tissue_stiffness", c.patient.tissue_stiffness);
  num("patient.bed_stiffness", c.patient.bed_stiffness);
  num("script.speed_mps", c.script.speed_mps);
  num("script.depth_m", c.script.depth_m);
  kv("script.freezes", std::to_string(c.script.freezes));
  num("script.freeze_s", c.script.freeze_s);
  return os.str();
}

std::string config_hash(const session::SessionConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_text(cfg))));
  return buf;
}

}  // namespace teleop::config
