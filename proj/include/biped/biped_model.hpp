#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "biped/gait_clock.hpp"
#include "biped/multibody.hpp"

namespace biped {

inline constexpr int kNumJoints = 12;
inline constexpr int kJointsPerLeg = 6;
inline constexpr const char* kModelSchema = "biped-model/1";

using JointVector = Eigen::Matrix<double, kNumJoints, 1>;

/// One joint of a leg chain. The right leg mirrors the left across the sagittal plane.
struct LegJointSpec {
  std::string name;
  Vec3 axis = Vec3::UnitY();
  Vec3 offset = Vec3::Zero();  // from the previous joint (hip offset is separate)
  double mass = 1.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Identity() * 0.01;
  double armature = 0.0;
  double q_default = 0.0;
  double lower = -1.0;
  double upper = 1.0;
  double torque_limit = 100.0;
  double kp = 100.0;
  double kd = -1.0;  // < 0: derived as 2 sqrt(kp * apparent inertia)
};

struct FootGeometry {
  Vec3 sole_offset{0.0, 0.0, -0.06};  // sole centre in the ankle-roll frame
  double front = 0.13;
  double back = -0.09;
  double half_width = 0.06;

  std::array<Vec3, 4> corners() const;
};

struct ContactParams {
  double stiffness = 1.0e5;          // N/m per corner
  double damping = 1000.0;           // N s/m per corner
  double tangential_damping = 1000.0;
  double friction = 0.8;
};

/// Stiff spring-damper pushing joints back inside their position limits.
struct JointLimitParams {
  double stiffness = 50000.0;
  double damping = 100.0;
};

/// Full robot description: floating base carrying the rigid upper-body lump, plus
/// two 6-DoF legs ordered [hip yaw, hip roll, hip pitch, knee, ankle pitch, ankle roll].
/// Joint vectors are [left leg, right leg].
struct KinematicModel {
  double gravity = 9.81;
  double physics_dt = 0.001;

  double base_mass = 50.0;
  Vec3 base_com{0.0, 0.0, 0.18};
  Mat3 base_inertia = Vec3(2.17, 1.875, 1.04).asDiagonal();
  Vec3 head_offset{0.0, 0.0, 0.6};
  Vec3 hip_offset{0.0, 0.09, -0.07};  // left hip; right uses -y

  std::array<LegJointSpec, kJointsPerLeg> leg;
  FootGeometry foot;
  ContactParams contact;
  JointLimitParams joint_limit;

  /// Validates invariants; throws ConfigError.
  void validate() const;

  JointVector q_default() const;
  JointVector lower_limits() const;
  JointVector upper_limits() const;
  JointVector torque_limits() const;

  /// Joint tree with bodies 1..6 the left leg and 7..12 the right leg.
  Multibody build_multibody(bool floating_base = true) const;

  /// Body indices of the ankle-roll (foot) links.
  static int foot_body(Foot foot) { return foot == Foot::Left ? kJointsPerLeg : 2 * kJointsPerLeg; }

  /// Base height with the soles resting on z = 0 at q_default, level base.
  double standing_base_height() const;

  double total_mass() const;
};

/// Built-in defaults: ~78 kg, ~0.8 m standing base height.
KinematicModel default_model();

nlohmann::json to_json(const KinematicModel& model);
KinematicModel model_from_json(const nlohmann::json& j);
KinematicModel load_model(const std::filesystem::path& path);

}  // namespace biped
