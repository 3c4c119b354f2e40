#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "biped/spatial.hpp"

namespace biped {

/// One body of a kinematic tree, attached to its parent by a revolute joint.
/// The body frame sits on the joint axis; `offset` places it in the parent frame
/// at zero joint angle.
struct LinkSpec {
  std::string name;
  int parent = 0;  // body index; 0 is the base
  Vec3 offset = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double mass = 1.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia_com = Mat3::Identity();
  double armature = 0.0;  // reflected rotor inertia, kg m^2
};

/// Tree topology and inertial data. Body 0 is the base; body j+1 is moved by joint j.
class Multibody {
 public:
  Multibody(bool floating_base, double base_mass, const Vec3& base_com, const Mat3& base_inertia_com,
            std::vector<LinkSpec> links);

  int num_joints() const { return static_cast<int>(links_.size()); }
  int num_bodies() const { return num_joints() + 1; }
  bool floating_base() const { return floating_base_; }
  int parent(int body) const { return parents_[body]; }
  const Mat6& inertia(int body) const { return inertias_[body]; }
  double body_mass(int body) const { return masses_[body]; }
  const Vec3& body_com(int body) const { return coms_[body]; }
  const LinkSpec& link(int joint) const { return links_[joint]; }
  double total_mass() const;

 private:
  bool floating_base_;
  std::vector<LinkSpec> links_;
  std::vector<int> parents_;
  std::vector<Mat6> inertias_;
  std::vector<double> masses_;
  std::vector<Vec3> coms_;
};

/// Generalized state: floating-base pose/twist plus joint coordinates.
struct MultibodyState {
  Vec3 base_position = Vec3::Zero();
  Eigen::Quaterniond base_orientation = Eigen::Quaterniond::Identity();
  Vec3 base_linear_velocity = Vec3::Zero();   // world frame
  Vec3 base_angular_velocity = Vec3::Zero();  // base frame
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  double time = 0.0;

  bool all_finite() const;
};

/// Scratch buffers for kinematics and ABA. Sized once per model; reused every step.
struct MultibodyWorkspace {
  explicit MultibodyWorkspace(const Multibody& model);

  std::vector<SpatialTransform> X;  // parent -> body
  std::vector<Mat3> R;              // world <- body rotation
  std::vector<Vec3> p;              // body origin in world
  std::vector<Vec6> v;              // body twist in body coords
  std::vector<Vec6> c;
  std::vector<Mat6> IA;
  std::vector<Vec6> pA;
  std::vector<Vec6> U;
  std::vector<double> D;
  std::vector<double> u;
  std::vector<Vec6> a;
  std::vector<Vec6> f_ext;  // external force on each body, body coords
  Eigen::VectorXd qdd;
  Vec6 base_acceleration = Vec6::Zero();  // spatial, base coords
};

/// Joints held rigid (qd = qdd = 0) are marked true.
using JointLockMask = std::vector<bool>;

/// Pass 1: body transforms, world poses and twists. Clears f_ext.
void update_kinematics(const Multibody& model, const MultibodyState& state, MultibodyWorkspace& ws);

/// Passes 2-3 of the articulated-body algorithm. Requires update_kinematics and
/// ws.f_ext filled. Gravity is a world-frame acceleration vector.
void articulated_body_dynamics(const Multibody& model, const MultibodyState& state,
                               const Eigen::VectorXd& tau, const Vec3& gravity,
                               const JointLockMask& locked, MultibodyWorkspace& ws);

/// Semi-implicit Euler using ws.qdd / ws.base_acceleration.
void integrate(const Multibody& model, MultibodyState& state, const MultibodyWorkspace& ws,
               const JointLockMask& locked, double dt);

/// World velocity of a point fixed in `body` (coords in the body frame).
Vec3 point_velocity(const MultibodyWorkspace& ws, int body, const Vec3& local);

inline Vec3 point_position(const MultibodyWorkspace& ws, int body, const Vec3& local) {
  return ws.p[body] + ws.R[body] * local;
}

/// Adds a world-frame force acting at a body-fixed point to ws.f_ext.
void apply_point_force(MultibodyWorkspace& ws, int body, const Vec3& local, const Vec3& force_world);

/// Kinetic energy including rotor armature; requires update_kinematics.
double kinetic_energy(const Multibody& model, const MultibodyState& state, const MultibodyWorkspace& ws);

/// Gravitational potential energy, zero at world z = 0.
double potential_energy(const Multibody& model, const MultibodyWorkspace& ws, const Vec3& gravity);

/// Composite inertia of the subtree below each joint about its axis at the given pose
/// with the base held fixed, plus armature.
Eigen::VectorXd apparent_joint_inertia(const Multibody& model, const Eigen::VectorXd& q);

}  // namespace biped
