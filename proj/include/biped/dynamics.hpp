#pragma once

#include <array>
#include <memory>

#include "biped/biped_model.hpp"
#include "biped/multibody.hpp"

namespace biped {

/// Floating-base pose/twist plus the 12 leg joints. Base linear velocity is in the
/// world frame, base angular velocity in the base frame.
using BipedState = MultibodyState;

struct PDGains {
  JointVector kp = JointVector::Zero();
  JointVector kd = JointVector::Zero();
};

/// kp from the model, kd = 2 sqrt(kp * apparent inertia at q_default) unless given.
PDGains default_gains(const KinematicModel& model);

struct FootContact {
  double fz = 0.0;                      // summed normal force, N
  Vec3 tangential = Vec3::Zero();       // summed friction force (world), N
  Vec3 velocity = Vec3::Zero();         // sole-centre velocity (world), m/s
  bool in_contact = false;
};

struct ContactReport {
  std::array<FootContact, 2> feet;  // indexed by Foot

  const FootContact& operator[](Foot f) const { return feet[static_cast<int>(f)]; }
  FootContact& operator[](Foot f) { return feet[static_cast<int>(f)]; }
};

/// Quantities the gait rewards read from a contact report.
struct FootLoad {
  double fz = 0.0;
  double speed_sq = 0.0;
};

std::array<FootLoad, 2> contact_forces(const ContactReport& report);

struct FrameSet {
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();
  Eigen::Isometry3d head = Eigen::Isometry3d::Identity();
  Eigen::Isometry3d left_foot = Eigen::Isometry3d::Identity();
  Eigen::Isometry3d right_foot = Eigen::Isometry3d::Identity();
};

/// World gravity direction (0,0,-1) expressed in the base frame.
Vec3 projected_gravity(const Eigen::Quaterniond& orientation);

/// Z-Y-X Euler angles (roll, pitch, yaw).
struct EulerZYX {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

EulerZYX euler_zyx(const Eigen::Quaterniond& orientation);

/// Euler angle rates from the base-frame angular velocity.
EulerZYX euler_zyx_rates(const EulerZYX& angles, const Vec3& omega_body);

struct SimOptions {
  bool contacts = true;
  bool gravity = true;
  bool actuation = true;      // false: motor torque is zero
  bool joint_limits = true;   // limit spring-damper
  JointLockMask locked;       // empty: all joints free
};

struct StepOutput {
  ContactReport contact;
  JointVector torque = JointVector::Zero();  // motor torque actually applied
};

/// Owns a model and its scratch space; steps one robot at a time.
class BipedDynamics {
 public:
  explicit BipedDynamics(std::shared_ptr<const KinematicModel> model, bool floating_base = true);
  BipedDynamics(std::shared_ptr<const KinematicModel> model, PDGains gains, bool floating_base = true);

  const KinematicModel& model() const { return *model_; }
  const Multibody& multibody() const { return multibody_; }
  const PDGains& gains() const { return gains_; }
  SimOptions& options() { return options_; }
  const SimOptions& options() const { return options_; }

  /// Robot at q_default standing on the ground plane, zero velocity.
  BipedState standing_state() const;

  /// One physics step of length dt with targets held. Throws SimulationDiverged.
  StepOutput step(BipedState& state, const JointVector& joint_targets, double dt);

  FrameSet forward_kinematics(const BipedState& state);

  double kinetic_energy(const BipedState& state);
  double potential_energy(const BipedState& state);

 private:
  std::shared_ptr<const KinematicModel> model_;
  Multibody multibody_;
  PDGains gains_;
  SimOptions options_;
  MultibodyWorkspace ws_;
  JointVector lower_, upper_, torque_limit_;
  std::array<Vec3, 4> corners_;
  Eigen::VectorXd tau_;
};

}  // namespace biped
