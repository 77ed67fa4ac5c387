#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace conr {

// World frame: y up, characters face +z.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Affine = Eigen::Affine3d;

/// Rz(a.z) * Ry(a.y) * Rx(a.x).
inline Mat3 rotation_xyz(const Vec3& a) {
  return (Eigen::AngleAxisd(a.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(a.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(a.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

/// Rotation `r` about `pivot`.
inline Affine rotation_about(const Vec3& pivot, const Mat3& r) {
  return Eigen::Translation3d(pivot) * Affine(r) * Eigen::Translation3d(-pivot);
}

}  // namespace conr
