#include "teleop/geometry.hpp"

#include <cmath>
#include <limits>

namespace teleop::geometry {

bool EllipsoidModel::valid() const {
  return center.allFinite() && a > 0.0 && b > 0.0 && c > 0.0 && std::isfinite(a) &&
         std::isfinite(b) && std::isfinite(c);
}

bool ContactParams::valid() const {
  return kp.allFinite() && kd.allFinite() && (kp.array() >= 0.0).all() &&
         (kd.array() >= 0.0).all();
}

EllipsoidModel fit_ellipsoid(const CalibrationSet& cal, double longitudinal_semi_axis) {
  if (!cal.xiphoid.allFinite() || !cal.left.allFinite() || !cal.right.allFinite() ||
      !cal.bed.allFinite()) {
    throw GeometryError(GeometryErrc::DegenerateCalibration, "non-finite calibration point");
  }
  if (!(cal.right.z() > cal.left.z())) {
    throw GeometryError(GeometryErrc::DegenerateCalibration,
                        "right landmark is not to the right of the left landmark");
  }
  if (!(cal.xiphoid.y() > cal.bed.y())) {
    throw GeometryError(GeometryErrc::DegenerateCalibration,
                        "xiphoid landmark is not above the bed");
  }
  if (!(longitudinal_semi_axis > 0.0) || !std::isfinite(longitudinal_semi_axis)) {
    throw GeometryError(GeometryErrc::DegenerateCalibration,
                        "longitudinal semi-axis must be positive");
  }

  EllipsoidModel m;
  m.a = (cal.right.z() - cal.left.z()) / 2.0;
  m.b = (cal.xiphoid.y() - cal.bed.y()) / 2.0;
  m.c = longitudinal_semi_axis;
  m.center = Vec3(cal.xiphoid.x(), (cal.xiphoid.y() + cal.bed.y()) / 2.0,
                  (cal.right.z() + cal.left.z()) / 2.0);
  return m;
}

double implicit_value(const EllipsoidModel& m, const Vec3& p) {
  const Vec3 u = p - m.center;
  return (u.z() * u.z()) / (m.a * m.a) + (u.y() * u.y()) / (m.b * m.b) +
         (u.x() * u.x()) / (m.c * m.c);
}

Vec3 surface_normal(const EllipsoidModel& m, const Vec3& p) {
  const Vec3 u = p - m.center;
  const Vec3 n = u.cwiseProduct(m.inverse_shape());
  const double len = n.norm();
  if (!(len > 0.0) || !std::isfinite(len)) {
    throw GeometryError(GeometryErrc::DegeneratePoint, "normal undefined at ellipsoid center");
  }
  return n / len;
}

Penetration penetration_depth(const EllipsoidModel& m, const Vec3& p) {
  Penetration out;
  out.normal = surface_normal(m, p);

  const Vec3 q = m.inverse_shape();
  const Vec3 u = p - m.center;
  // A d^2 + 2 B d + C = 0. B > 0 because the normal is parallel to Q u.
  const double A = out.normal.cwiseProduct(q).dot(out.normal);
  const double B = u.cwiseProduct(q).dot(out.normal);
  const double C = implicit_value(m, p) - 1.0;

  const double disc = B * B - A * C;
  if (disc < 0.0) {
    out.depth = -std::numeric_limits<double>::infinity();
    out.intersects = false;
    return out;
  }
  // Smaller-magnitude root (-B + sqrt(disc)) / A, written without cancellation.
  out.depth = -C / (B + std::sqrt(disc));
  return out;
}

ContactResult contact_force(const EllipsoidModel& m, const Vec3& p, const Vec3& v,
                            const ContactParams& params) {
  const Penetration pen = penetration_depth(m, p);
  ContactResult r;
  r.depth = pen.depth;
  r.normal = pen.normal;
  if (pen.intersects && pen.depth > 0.0) {
    r.penetrating = true;
    r.force = pen.depth * params.kp.cwiseProduct(pen.normal) - params.kd.cwiseProduct(v);
  }
  return r;
}

}  // namespace teleop::geometry
