#pragma once

// Tracking-error and image-quality statistics.
//
// Position error is the Euclidean norm of follower - leader per sample.
// Orientation error is the geodesic angle of leader^-1 * follower. The
// "normalized" variants remove the mean error first: the arithmetic mean
// offset for position and the normalized chordal mean error rotation for
// orientation.

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "teleop/pose.hpp"
#include "teleop/trajectory.hpp"

namespace teleop::analytics {

enum class AnalyticsErrc { EmptyLog, EmptyList, InsufficientData, BadScoreFile };

class AnalyticsError : public std::runtime_error {
 public:
  AnalyticsError(AnalyticsErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  AnalyticsErrc code() const noexcept { return code_; }

 private:
  AnalyticsErrc code_;
};

inline constexpr double kMillimetersPerMeter = 1000.0;
inline constexpr double kDegreesPerRadian = 57.295779513082320876798154814105;

struct PositionMetrics {
  double rmse = 0.0;   // m
  double nrmse = 0.0;  // m
  Vec3 mean_offset = Vec3::Zero();  // m
  std::size_t samples = 0;
};

struct OrientationMetrics {
  double rmse = 0.0;   // rad
  double nrmse = 0.0;  // rad
  Quat mean_rot_offset = Quat::Identity();
  std::size_t samples = 0;
};

struct TrackingReport {
  double rmse_pos_mm = 0.0;
  double nrmse_pos_mm = 0.0;
  double rmse_ang_deg = 0.0;
  double nrmse_ang_deg = 0.0;
  Vec3 mean_offset_mm = Vec3::Zero();
  Quat mean_rot_offset = Quat::Identity();
  std::size_t sample_count = 0;
};

/// Geodesic rotation angle of a unit quaternion, radians in [0, pi].
/// Sign-invariant: q and -q give the same angle.
double rotation_angle(const Quat& q);

PositionMetrics position_metrics(std::span<const Vec3> leader, std::span<const Vec3> follower);
OrientationMetrics orientation_metrics(std::span<const Quat> leader,
                                       std::span<const Quat> follower);

/// Metrics over the Scanning-phase records of a log. Throws EmptyLog when
/// fewer than two Scanning records exist.
PositionMetrics position_metrics(std::span<const TrajectoryRecord> log);
OrientationMetrics orientation_metrics(std::span<const TrajectoryRecord> log);

TrackingReport make_report(const PositionMetrics& pos, const OrientationMetrics& ang);
TrackingReport tracking_report(std::span<const TrajectoryRecord> log);

/// Normalized arithmetic mean of quaternions after aligning each to the
/// hemisphere of the first.
Quat chordal_mean(std::span<const Quat> qs);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
};

MeanSd mean_sd(std::span<const double> values);

struct ScanAggregate {
  MeanSd rmse_pos_mm;
  MeanSd nrmse_pos_mm;
  MeanSd rmse_ang_deg;
  MeanSd nrmse_ang_deg;
  std::size_t scans = 0;
};

/// Throws EmptyList on an empty input.
ScanAggregate aggregate_scans(std::span<const TrackingReport> reports);

// Image quality ---------------------------------------------------------------

struct QualityScore {
  int scan = 0;
  int target = 0;  // 1-5
  std::string rater;
  int value = 0;  // 0 = not obtained, 1-5 otherwise
};

struct QualitySummary {
  std::size_t total_targets = 0;
  std::size_t scored_targets = 0;  // targets not missing for any rater
  std::size_t score_count = 0;     // scores that enter the mean
  MeanSd score;
  double fraction_all_ge3 = 0.0;  // of scored targets, rated >= 3 by every rater
  double fraction_all_5 = 0.0;    // of scored targets, rated 5 by every rater
  std::array<std::size_t, 6> histogram{};  // every score row, zeros included
  std::map<std::string, std::size_t> missing_per_rater;
  std::size_t missing_union = 0;
  std::map<int, double> mean_per_scan;  // scans with at least one scored target
};

/// Zero means "not obtained". A target missing for any rater is excluded
/// from the mean, the fractions and the per-scan means.
QualitySummary quality_summary(std::span<const QualityScore> scores);

/// One row per line: "scan target rater score"; '#' starts a comment and a
/// leading "scan target rater score" header row is skipped. An optional
/// "# config_hash=<hex>" comment is reported through `config_hash`.
/// Throws AnalyticsError(BadScoreFile) naming the line.
std::vector<QualityScore> read_scores(std::istream& in,
                                      std::optional<std::string>* config_hash = nullptr);

// Correlation -----------------------------------------------------------------

struct Correlation {
  double pearson_r = 0.0;
  double pearson_p = 1.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
  std::size_t n = 0;
};

/// Pearson r with a two-sided t-test on n-2 degrees of freedom, and Spearman
/// rho (average ranks for ties) tested the same way. Throws InsufficientData
/// for n < 3, or with reason "zero variance" when either input is constant.
Correlation correlate(std::span<const double> x, std::span<const double> y);

struct RmseQualityCorrelation {
  Correlation position;
  Correlation orientation;
};

RmseQualityCorrelation rmse_quality_correlation(std::span<const TrackingReport> reports,
                                                std::span<const double> mean_quality_per_scan);

}  // namespace teleop::analytics
