#include "teleop/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

namespace teleop::analytics {
namespace {

std::vector<const TrajectoryRecord*> scanning(std::span<const TrajectoryRecord> log) {
  std::vector<const TrajectoryRecord*> out;
  for (const auto& r : log) {
    if (r.phase == Phase::Scanning) out.push_back(&r);
  }
  if (out.size() < 2) {
    throw AnalyticsError(AnalyticsErrc::EmptyLog, "no scanning-phase data");
  }
  return out;
}

double two_sided_t_p(double r, std::size_t n) {
  const double dof = static_cast<double>(n) - 2.0;
  const double r2 = r * r;
  if (r2 >= 1.0) return 0.0;
  const double t = std::abs(r) * std::sqrt(dof / (1.0 - r2));
  const boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw AnalyticsError(AnalyticsErrc::InsufficientData, "zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

Quat normalized(const Quat& q) { return q.normalized(); }

}  // namespace

double rotation_angle(const Quat& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

PositionMetrics position_metrics(std::span<const Vec3> leader, std::span<const Vec3> follower) {
  if (leader.size() != follower.size()) {
    throw std::invalid_argument("leader and follower trajectories differ in length");
  }
  if (leader.size() < 2) {
    throw AnalyticsError(AnalyticsErrc::EmptyLog, "no scanning-phase data");
  }
  const double n = static_cast<double>(leader.size());
  std::vector<Vec3> err(leader.size());
  Vec3 sum = Vec3::Zero();
  double sq = 0.0;
  for (std::size_t i = 0; i < leader.size(); ++i) {
    err[i] = follower[i] - leader[i];
    sum += err[i];
    sq += err[i].squaredNorm();
  }
  PositionMetrics m;
  m.samples = leader.size();
  m.mean_offset = sum / n;
  m.rmse = std::sqrt(sq / n);
  double nsq = 0.0;
  for (const Vec3& e : err) nsq += (e - m.mean_offset).squaredNorm();
  m.nrmse = std::sqrt(nsq / n);
  return m;
}

Quat chordal_mean(std::span<const Quat> qs) {
  if (qs.empty()) return Quat::Identity();
  Eigen::Vector4d ref = qs.front().coeffs();
  if (ref.w() < 0.0) ref = -ref;  // coeffs() is (x, y, z, w)
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (const Quat& q : qs) {
    Eigen::Vector4d c = q.coeffs();
    sum += (c.dot(ref) < 0.0) ? Eigen::Vector4d(-c) : c;
  }
  const double len = sum.norm();
  if (!(len > 0.0)) return Quat(ref.w(), ref.x(), ref.y(), ref.z()).normalized();
  sum /= len;
  return Quat(sum.w(), sum.x(), sum.y(), sum.z());
}

OrientationMetrics orientation_metrics(std::span<const Quat> leader,
                                       std::span<const Quat> follower) {
  if (leader.size() != follower.size()) {
    throw std::invalid_argument("leader and follower trajectories differ in length");
  }
  if (leader.size() < 2) {
    throw AnalyticsError(AnalyticsErrc::EmptyLog, "no scanning-phase data");
  }
  const double n = static_cast<double>(leader.size());
  std::vector<Quat> err(leader.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < leader.size(); ++i) {
    const Quat l = normalized(leader[i]);
    Quat f = normalized(follower[i]);
    if (l.coeffs().dot(f.coeffs()) < 0.0) f.coeffs() = -f.coeffs();
    err[i] = l.conjugate() * f;
    const double a = rotation_angle(err[i]);
    sq += a * a;
  }
  OrientationMetrics m;
  m.samples = leader.size();
  m.rmse = std::sqrt(sq / n);
  m.mean_rot_offset = chordal_mean(err);
  const Quat inv = m.mean_rot_offset.conjugate();
  double nsq = 0.0;
  for (const Quat& r : err) {
    const double a = rotation_angle(inv * r);
    nsq += a * a;
  }
  m.nrmse = std::sqrt(nsq / n);
  return m;
}

PositionMetrics position_metrics(std::span<const TrajectoryRecord> log) {
  const auto recs = scanning(log);
  std::vector<Vec3> l;
  std::vector<Vec3> f;
  l.reserve(recs.size());
  f.reserve(recs.size());
  for (const auto* r : recs) {
    l.push_back(r->leader.position);
    f.push_back(r->follower.position);
  }
  return position_metrics(l, f);
}

OrientationMetrics orientation_metrics(std::span<const TrajectoryRecord> log) {
  const auto recs = scanning(log);
  std::vector<Quat> l;
  std::vector<Quat> f;
  l.reserve(recs.size());
  f.reserve(recs.size());
  for (const auto* r : recs) {
    l.push_back(r->leader.orientation);
    f.push_back(r->follower.orientation);
  }
  return orientation_metrics(l, f);
}

TrackingReport make_report(const PositionMetrics& pos, const OrientationMetrics& ang) {
  TrackingReport r;
  r.rmse_pos_mm = pos.rmse * kMillimetersPerMeter;
  r.nrmse_pos_mm = pos.nrmse * kMillimetersPerMeter;
  r.mean_offset_mm = pos.mean_offset * kMillimetersPerMeter;
  r.rmse_ang_deg = ang.rmse * kDegreesPerRadian;
  r.nrmse_ang_deg = ang.nrmse * kDegreesPerRadian;
  r.mean_rot_offset = ang.mean_rot_offset;
  r.sample_count = pos.samples;
  return r;
}

TrackingReport tracking_report(std::span<const TrajectoryRecord> log) {
  return make_report(position_metrics(log), orientation_metrics(log));
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

ScanAggregate aggregate_scans(std::span<const TrackingReport> reports) {
  if (reports.empty()) throw AnalyticsError(AnalyticsErrc::EmptyList, "no scans to aggregate");
  auto column = [&](double TrackingReport::*field) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(r.*field);
    return mean_sd(v);
  };
  ScanAggregate a;
  a.scans = reports.size();
  a.rmse_pos_mm = column(&TrackingReport::rmse_pos_mm);
  a.nrmse_pos_mm = column(&TrackingReport::nrmse_pos_mm);
  a.rmse_ang_deg = column(&TrackingReport::rmse_ang_deg);
  a.nrmse_ang_deg = column(&TrackingReport::nrmse_ang_deg);
  return a;
}

QualitySummary quality_summary(std::span<const QualityScore> scores) {
  QualitySummary s;
  if (scores.empty()) return s;

  using TargetKey = std::pair<int, int>;
  std::set<std::string> raters;
  std::map<TargetKey, std::map<std::string, int>> by_target;
  for (const auto& q : scores) {
    raters.insert(q.rater);
    by_target[{q.scan, q.target}][q.rater] = q.value;
    if (q.value >= 0 && q.value <= 5) ++s.histogram[static_cast<std::size_t>(q.value)];
  }
  for (const auto& r : raters) s.missing_per_rater[r] = 0;

  std::vector<double> kept;
  std::map<int, std::vector<double>> per_scan;
  std::size_t all_ge3 = 0;
  std::size_t all_5 = 0;
  s.total_targets = by_target.size();
  for (const auto& [key, by_rater] : by_target) {
    bool missing = false;
    for (const auto& r : raters) {
      auto it = by_rater.find(r);
      // A rater with no row for the target counts the same as a 0.
      if (it == by_rater.end() || it->second == 0) {
        ++s.missing_per_rater[r];
        missing = true;
      }
    }
    if (missing) {
      ++s.missing_union;
      continue;
    }
    ++s.scored_targets;
    bool ge3 = true;
    bool five = true;
    for (const auto& [rater, v] : by_rater) {
      kept.push_back(v);
      per_scan[key.first].push_back(v);
      ge3 = ge3 && v >= 3;
      five = five && v == 5;
    }
    all_ge3 += ge3 ? 1 : 0;
    all_5 += five ? 1 : 0;
  }
  s.score_count = kept.size();
  s.score = mean_sd(kept);
  if (s.scored_targets > 0) {
    s.fraction_all_ge3 = static_cast<double>(all_ge3) / static_cast<double>(s.scored_targets);
    s.fraction_all_5 = static_cast<double>(all_5) / static_cast<double>(s.scored_targets);
  }
  for (const auto& [scan, v] : per_scan) s.mean_per_scan[scan] = mean_sd(v).mean;
  return s;
}

std::vector<QualityScore> read_scores(std::istream& in, std::optional<std::string>* config_hash) {
  std::vector<QualityScore> out;
  std::set<std::tuple<int, int, std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& why) {
    return AnalyticsError(AnalyticsErrc::BadScoreFile,
                          "line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      const std::string comment = line.substr(hash + 1);
      const auto k = comment.find("config_hash=");
      if (config_hash && k != std::string::npos) {
        std::istringstream cs(comment.substr(k + 12));
        std::string value;
        cs >> value;
        *config_hash = value;
      }
      line.resize(hash);
    }
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 4) throw bad("expected 4 columns: scan target rater score");
    if (out.empty() && tok[0] == "scan") continue;

    QualityScore q;
    std::size_t used = 0;
    try {
      q.scan = std::stoi(tok[0], &used);
      if (used != tok[0].size()) throw std::invalid_argument("scan");
      q.target = std::stoi(tok[1], &used);
      if (used != tok[1].size()) throw std::invalid_argument("target");
      q.value = std::stoi(tok[3], &used);
      if (used != tok[3].size()) throw std::invalid_argument("score");
    } catch (const std::exception&) {
      throw bad("non-integer scan, target or score");
    }
    q.rater = tok[2];
    if (q.value < 0 || q.value > 5) throw bad("score must be in 0..5");
    if (q.target < 1 || q.target > 5) throw bad("target must be in 1..5");
    if (q.scan < 1) throw bad("scan must be positive");
    if (!seen.emplace(q.scan, q.target, q.rater).second) {
      throw bad("duplicate (scan, target, rater) row");
    }
    out.push_back(std::move(q));
  }
  return out;
}

Correlation correlate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("correlate: length mismatch");
  if (x.size() < 3) {
    throw AnalyticsError(AnalyticsErrc::InsufficientData, "need at least 3 paired samples");
  }
  Correlation c;
  c.n = x.size();
  c.pearson_r = pearson(x, y);
  c.pearson_p = two_sided_t_p(c.pearson_r, c.n);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  c.spearman_rho = pearson(rx, ry);
  c.spearman_p = two_sided_t_p(c.spearman_rho, c.n);
  return c;
}

RmseQualityCorrelation rmse_quality_correlation(std::span<const TrackingReport> reports,
                                                std::span<const double> mean_quality_per_scan) {
  if (reports.size() != mean_quality_per_scan.size()) {
    throw std::invalid_argument("one mean quality value is required per scan");
  }
  std::vector<double> pos;
  std::vector<double> ang;
  for (const auto& r : reports) {
    pos.push_back(r.rmse_pos_mm);
    ang.push_back(r.rmse_ang_deg);
  }
  RmseQualityCorrelation out;
  out.position = correlate(pos, mean_quality_per_scan);
  out.orientation = correlate(ang, mean_quality_per_scan);
  return out;
}

}  // namespace teleop::analytics
