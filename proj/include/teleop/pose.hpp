#pragma once

#include <cstdint>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace teleop {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

/// Transducer pose in the patient frame. Orientation is a unit quaternion,
/// serialized in (w, x, y, z) order.
struct Pose {
  std::uint64_t t_us = 0;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
};

inline bool same_quat(const Quat& a, const Quat& b) {
  return a.w() == b.w() && a.x() == b.x() && a.y() == b.y() && a.z() == b.z();
}

inline bool operator==(const Pose& a, const Pose& b) {
  return a.t_us == b.t_us && a.position == b.position && same_quat(a.orientation, b.orientation);
}

}  // namespace teleop
