#pragma once

// Ellipsoid patient proxy: fitting from four pressed landmarks, membership,
// normals, penetration depth and the spring-damper contact force rendered to
// the leader.
//
// Frame: +x along the patient's longitudinal axis, +y up from the bed,
// +z lateral with z(right) > z(left). Semi-axis a lies along z, b along y
// and c along x.

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace teleop::geometry {

using Vec3 = Eigen::Vector3d;

enum class GeometryErrc {
  DegenerateCalibration,
  DegeneratePoint,
  NoIntersection,  // reported through Penetration::intersects, never thrown
};

class GeometryError : public std::runtime_error {
 public:
  GeometryError(GeometryErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  GeometryErrc code() const noexcept { return code_; }

 private:
  GeometryErrc code_;
};

/// Tip positions captured at the four landmarks, in pressing order.
struct CalibrationSet {
  Vec3 xiphoid;
  Vec3 left;
  Vec3 right;
  Vec3 bed;  // only the height is used
};

inline constexpr double kDefaultLongitudinalSemiAxis = 10.0;  // m

struct EllipsoidModel {
  Vec3 center = Vec3::Zero();
  double a = 1.0;  // lateral (z)
  double b = 1.0;  // vertical (y)
  double c = kDefaultLongitudinalSemiAxis;  // longitudinal (x)

  /// Diagonal of the inverse shape matrix in (x, y, z) order.
  Vec3 inverse_shape() const { return {1.0 / (c * c), 1.0 / (b * b), 1.0 / (a * a)}; }
  bool valid() const;
};

struct ContactParams {
  Vec3 kp = Vec3::Constant(500.0);  // N/m
  Vec3 kd = Vec3::Constant(5.0);    // N*s/m
  bool valid() const;
};

struct ContactResult {
  bool penetrating = false;
  double depth = 0.0;  // signed, positive inside
  Vec3 normal = Vec3::UnitY();
  Vec3 force = Vec3::Zero();
};

struct Penetration {
  double depth = 0.0;
  Vec3 normal = Vec3::UnitY();
  // False when the normal line misses the surface (far outside an elongated
  // ellipsoid); depth is then -inf and the point is treated as free space.
  bool intersects = true;
};

/// Throws GeometryError(DegenerateCalibration) if the landmarks do not span
/// a positive width and height.
EllipsoidModel fit_ellipsoid(const CalibrationSet& cal,
                             double longitudinal_semi_axis = kDefaultLongitudinalSemiAxis);

/// Quadratic form of the ellipsoid; < 1 strictly inside, == 1 on the surface.
double implicit_value(const EllipsoidModel& m, const Vec3& p);

/// Outward unit normal of the uniformly scaled ellipsoid passing through p.
Vec3 surface_normal(const EllipsoidModel& m, const Vec3& p);

/// Signed distance along the scaled-ellipsoid normal from p to the surface.
///
/// Solves |p + d n - center|_Q = 1 and keeps the root of smaller magnitude,
/// i.e. the near-side intersection. Positive inside, negative outside.
Penetration penetration_depth(const EllipsoidModel& m, const Vec3& p);

/// f = d Kp n - Kd v while penetrating, zero otherwise.
ContactResult contact_force(const EllipsoidModel& m, const Vec3& p, const Vec3& v,
                            const ContactParams& params);

}  // namespace teleop::geometry
