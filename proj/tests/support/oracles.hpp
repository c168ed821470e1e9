#pragma once

// Independent reference computations shared by the unit and acceptance
// suites. Nothing here calls the code under test for the quantity it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "teleop/geometry.hpp"
#include "teleop/protocol.hpp"

namespace teleop::testing {

using geometry::EllipsoidModel;

/// Quadratic form evaluated term by term in (z, y, x) order.
inline double implicit_oracle(const EllipsoidModel& m, const Vec3& p) {
  const double dz = (p.z() - m.center.z()) / m.a;
  const double dy = (p.y() - m.center.y()) / m.b;
  const double dx = (p.x() - m.center.x()) / m.c;
  return dz * dz + dy * dy + dx * dx;
}

inline Vec3 gradient_oracle(const EllipsoidModel& m, const Vec3& p, double h = 1e-7) {
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 hi = p;
    Vec3 lo = p;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (implicit_oracle(m, hi) - implicit_oracle(m, lo)) / (2.0 * h);
  }
  return g;
}

/// Direction of the analytic gradient 2 (p - c)_i / s_i^2.
inline Vec3 normal_oracle(const EllipsoidModel& m, const Vec3& p) {
  const Vec3 d = p - m.center;
  return Vec3(d.x() / (m.c * m.c), d.y() / (m.b * m.b), d.z() / (m.a * m.a)).normalized();
}

/// Bisection for g(d) = implicit(p + d n) - 1 on [lo, hi] with a sign change.
inline double bisect(const EllipsoidModel& m, const Vec3& p, const Vec3& n, double lo, double hi) {
  auto g = [&](double d) { return implicit_oracle(m, p + d * n) - 1.0; };
  double glo = g(lo);
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Depth of an interior point along the unit normal n: both surface
/// crossings are bracketed by marching outward, and the one nearer p wins.
inline double depth_oracle(const EllipsoidModel& m, const Vec3& p, const Vec3& n) {
  const double reach = 2.0 * std::max({m.a, m.b, m.c}) + 1.0;
  const double forward = bisect(m, p, n, 0.0, reach);
  const double backward = bisect(m, p, n, -reach, 0.0);
  return std::abs(forward) <= std::abs(backward) ? forward : backward;
}

struct Rng {
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(gen); }
  Vec3 unit_ball() {
    for (;;) {
      const Vec3 v(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      if (v.squaredNorm() <= 1.0) return v;
    }
  }
  Quat unit_quat() {
    Quat q(normal(), normal(), normal(), normal());
    return q.normalized();
  }
  std::mt19937_64 gen;
};

inline EllipsoidModel random_ellipsoid(Rng& r) {
  EllipsoidModel m;
  m.center = Vec3(r.uniform(-1, 1), r.uniform(0.0, 0.5), r.uniform(-1, 1));
  m.a = r.uniform(0.05, 0.5);
  m.b = r.uniform(0.05, 0.5);
  m.c = r.uniform(std::max(m.a, m.b), 10.0);
  return m;
}

/// Strictly interior point at least 1% of the way out from the center.
inline Vec3 random_interior(Rng& r, const EllipsoidModel& m) {
  for (;;) {
    const Vec3 u = r.unit_ball();
    const double len = u.norm();
    if (len < 0.01 || len > 0.999) continue;
    return m.center + Vec3(m.c * u.x(), m.b * u.y(), m.a * u.z());
  }
}

inline std::vector<std::uint8_t> from_hex(const std::string& hex) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

/// Finite double spread over many magnitudes, including extremes.
inline double wild_double(Rng& r) {
  switch (r.gen() % 6) {
    case 0: return 0.0;
    case 1: return -0.0;
    case 2: return std::numeric_limits<double>::max() * (r.gen() % 2 ? 1 : -1);
    case 3: return std::numeric_limits<double>::denorm_min() * static_cast<double>(r.gen() % 1000);
    case 4: return std::ldexp(r.uniform(-1, 1), static_cast<int>(r.gen() % 2000) - 1000);
    default: return r.uniform(-10, 10);
  }
}

inline protocol::WireMessage random_message(Rng& r) {
  using namespace protocol;
  WireMessage m;
  m.seq = static_cast<std::uint32_t>(r.gen());
  m.timestamp_us = r.gen();
  auto pose = [&r] {
    PosePayload p;
    p.position = Vec3(wild_double(r), wild_double(r), wild_double(r));
    p.orientation = r.unit_quat();
    return p;
  };
  switch (r.gen() % 5) {
    case 0:
      m.payload = pose();
      break;
    case 1: {
      ForcePosePayload f;
      f.force = Vec3(wild_double(r), wild_double(r), wild_double(r));
      f.pose = pose();
      m.payload = f;
      break;
    }
    case 2: {
      static const std::array<std::string, 6> words = {"START", "STOP", "STEP", "GAINS kp=500",
                                                       "caf\xC3\xA9", "\xE2\x82\xAC 1"};
      std::string text;
      const std::size_t n = r.gen() % 40;
      for (std::size_t i = 0; i < n; ++i) text += words[r.gen() % words.size()] + " ";
      if (r.gen() % 50 == 0) text = std::string(kMaxControlText, 'x');
      m.payload = ControlPayload{text};
      break;
    }
    case 3: {
      CalibrationPayload c;
      c.kind = CalibrationPayload::Kind::CapturedPoint;
      c.step = static_cast<std::uint8_t>(1 + r.gen() % 4);
      c.point = Vec3(wild_double(r), wild_double(r), wild_double(r));
      m.payload = c;
      break;
    }
    default: {
      CalibrationPayload c;
      c.kind = CalibrationPayload::Kind::FittedModel;
      c.model.center = Vec3(r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1));
      c.model.a = r.uniform(0.01, 1);
      c.model.b = r.uniform(0.01, 1);
      c.model.c = r.uniform(1, 20);
      m.payload = c;
      break;
    }
  }
  m.channel = channel_for(m.payload);
  return m;
}

// Published per-scan tracking results (11 scans).
inline constexpr std::array<double, 11> kPublishedPosition = {31.9, 41.3, 29.8, 30.8, 44.3, 32.7,
                                                           22.7, 51.8, 19.3, 22.7, 24.0};
inline constexpr std::array<double, 11> kPublishedNormalizedPosition = {
    14.2, 6.99, 8.88, 8.09, 18.5, 11.3, 9.13, 11.6, 5.14, 8.90, 7.84};
inline constexpr std::array<double, 11> kPublishedOrientation = {18.3, 11.5, 8.04, 9.21, 15.2, 11.5,
                                                              6.46, 15.1, 8.89, 11.5, 9.59};
inline constexpr std::array<double, 11> kPublishedNormalizedOrientation = {
    5.70, 3.82, 3.73, 3.72, 4.19, 10.9, 2.63, 13.2, 5.16, 6.94, 3.96};

inline std::string fixture_path(const std::string& name) {
  return std::string(TELEOP_FIXTURE_DIR) + "/" + name;
}

}  // namespace teleop::testing
