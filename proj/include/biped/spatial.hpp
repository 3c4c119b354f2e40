#pragma once

// Spatial (6D) algebra in Plucker coordinates. Motion vectors are [angular; linear],
// force vectors are [moment; force].

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace biped {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Coordinate transform from frame A to frame B: E rotates A-coords into B-coords,
/// r is B's origin expressed in A.
struct SpatialTransform {
  Mat3 E = Mat3::Identity();
  Vec3 r = Vec3::Zero();

  Vec6 apply(const Vec6& m) const {
    Vec6 out;
    out.head<3>() = E * m.head<3>();
    out.tail<3>() = E * (m.tail<3>() - r.cross(m.head<3>()));
    return out;
  }

  /// X^T f: maps a force expressed in B back to A.
  Vec6 apply_transpose(const Vec6& f) const {
    Vec6 out;
    const Vec3 force = E.transpose() * f.tail<3>();
    out.head<3>() = E.transpose() * f.head<3>() + r.cross(force);
    out.tail<3>() = force;
    return out;
  }

  /// this * rhs (apply rhs first).
  SpatialTransform operator*(const SpatialTransform& rhs) const {
    return {E * rhs.E, rhs.r + rhs.E.transpose() * r};
  }

  Mat6 matrix() const {
    Mat6 X;
    X.topLeftCorner<3, 3>() = E;
    X.topRightCorner<3, 3>().setZero();
    X.bottomLeftCorner<3, 3>() = -E * skew(r);
    X.bottomRightCorner<3, 3>() = E;
    return X;
  }

  /// X^T I X for a symmetric 6x6 inertia I expressed in B; result expressed in A.
  Mat6 transform_inertia(const Mat6& inertia) const;
};

/// v x m (motion cross product).
inline Vec6 cross_motion(const Vec6& v, const Vec6& m) {
  Vec6 out;
  out.head<3>() = v.head<3>().cross(m.head<3>());
  out.tail<3>() = v.head<3>().cross(m.tail<3>()) + v.tail<3>().cross(m.head<3>());
  return out;
}

/// v x* f (force cross product).
inline Vec6 cross_force(const Vec6& v, const Vec6& f) {
  Vec6 out;
  out.head<3>() = v.head<3>().cross(f.head<3>()) + v.tail<3>().cross(f.tail<3>());
  out.tail<3>() = v.head<3>().cross(f.tail<3>());
  return out;
}

/// Rigid-body inertia about the body frame origin given mass, COM and inertia at the COM.
inline Mat6 spatial_inertia(double mass, const Vec3& com, const Mat3& inertia_com) {
  const Mat3 c = skew(com);
  Mat6 I;
  I.topLeftCorner<3, 3>() = inertia_com + mass * c * c.transpose();
  I.topRightCorner<3, 3>() = mass * c;
  I.bottomLeftCorner<3, 3>() = mass * c.transpose();
  I.bottomRightCorner<3, 3>() = mass * Mat3::Identity();
  return I;
}

/// Rotation matrix for angle about a unit axis (active rotation).
inline Mat3 axis_rotation(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 m;
  if (axis == Vec3::UnitX()) {
    m << 1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c;
  } else if (axis == Vec3::UnitY()) {
    m << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  } else if (axis == Vec3::UnitZ()) {
    m << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  } else {
    m = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  }
  return m;
}

}  // namespace biped
