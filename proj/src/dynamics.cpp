#include "biped/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "biped/errors.hpp"

namespace biped {

PDGains default_gains(const KinematicModel& model) {
  const Multibody fixed = model.build_multibody(false);
  const Eigen::VectorXd inertia = apparent_joint_inertia(fixed, model.q_default());
  PDGains g;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& spec = model.leg[j % kJointsPerLeg];
    g.kp[j] = spec.kp;
    g.kd[j] = spec.kd >= 0.0 ? spec.kd : 2.0 * std::sqrt(spec.kp * inertia[j]);
  }
  return g;
}

std::array<FootLoad, 2> contact_forces(const ContactReport& report) {
  std::array<FootLoad, 2> out;
  for (int f = 0; f < 2; ++f) {
    out[f].fz = report.feet[f].fz;
    out[f].speed_sq = report.feet[f].velocity.squaredNorm();
  }
  return out;
}

Vec3 projected_gravity(const Eigen::Quaterniond& orientation) {
  return orientation.conjugate() * Vec3(0.0, 0.0, -1.0);
}

EulerZYX euler_zyx(const Eigen::Quaterniond& orientation) {
  const Mat3 R = orientation.toRotationMatrix();
  EulerZYX e;
  e.yaw = std::atan2(R(1, 0), R(0, 0));
  e.pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  e.roll = std::atan2(R(2, 1), R(2, 2));
  return e;
}

EulerZYX euler_zyx_rates(const EulerZYX& a, const Vec3& w) {
  const double sr = std::sin(a.roll), cr = std::cos(a.roll);
  const double cp = std::cos(a.pitch), tp = std::tan(a.pitch);
  EulerZYX r;
  r.roll = w.x() + sr * tp * w.y() + cr * tp * w.z();
  r.pitch = cr * w.y() - sr * w.z();
  r.yaw = (sr * w.y() + cr * w.z()) / cp;
  return r;
}

BipedDynamics::BipedDynamics(std::shared_ptr<const KinematicModel> model, bool floating_base)
    : BipedDynamics(model, default_gains(*model), floating_base) {}

BipedDynamics::BipedDynamics(std::shared_ptr<const KinematicModel> model, PDGains gains, bool floating_base)
    : model_(std::move(model)),
      multibody_(model_->build_multibody(floating_base)),
      gains_(std::move(gains)),
      ws_(multibody_),
      lower_(model_->lower_limits()),
      upper_(model_->upper_limits()),
      torque_limit_(model_->torque_limits()),
      corners_(model_->foot.corners()),
      tau_(Eigen::VectorXd::Zero(kNumJoints)) {}

BipedState BipedDynamics::standing_state() const {
  BipedState s;
  s.q = model_->q_default();
  s.qd = Eigen::VectorXd::Zero(kNumJoints);
  // settle into the expected static penetration so the first steps do not bounce
  const double sink = model_->total_mass() * model_->gravity / (8.0 * model_->contact.stiffness);
  s.base_position = Vec3(0.0, 0.0, model_->standing_base_height() - sink);
  return s;
}

StepOutput BipedDynamics::step(BipedState& state, const JointVector& joint_targets, double dt) {
  if (!(dt > 0.0 && dt <= 0.01)) throw InputError("step: dt must be in (0, 0.01]");
  if (!joint_targets.allFinite()) throw InputError("step: joint targets must be finite");

  update_kinematics(multibody_, state, ws_);

  StepOutput out;
  for (int j = 0; j < kNumJoints; ++j) {
    double tau = 0.0;
    if (options_.actuation) {
      const double target = std::clamp(joint_targets[j], lower_[j], upper_[j]);
      tau = gains_.kp[j] * (target - state.q[j]) - gains_.kd[j] * state.qd[j];
      tau = std::clamp(tau, -torque_limit_[j], torque_limit_[j]);
    }
    out.torque[j] = tau;
    if (options_.joint_limits) {
      if (state.q[j] > upper_[j]) {
        tau -= model_->joint_limit.stiffness * (state.q[j] - upper_[j]) + model_->joint_limit.damping * state.qd[j];
      } else if (state.q[j] < lower_[j]) {
        tau -= model_->joint_limit.stiffness * (state.q[j] - lower_[j]) + model_->joint_limit.damping * state.qd[j];
      }
    }
    tau_[j] = tau;
  }

  const auto& cp = model_->contact;
  for (Foot foot : {Foot::Left, Foot::Right}) {
    const int body = KinematicModel::foot_body(foot);
    FootContact& fc = out.contact[foot];
    fc.velocity = point_velocity(ws_, body, model_->foot.sole_offset);
    if (!options_.contacts) continue;
    for (const Vec3& corner : corners_) {
      const Vec3 pos = point_position(ws_, body, corner);
      if (pos.z() >= 0.0) continue;
      fc.in_contact = true;
      const Vec3 vel = point_velocity(ws_, body, corner);
      const double normal = std::max(0.0, -cp.stiffness * pos.z() - cp.damping * vel.z());
      Vec3 tangential(-cp.tangential_damping * vel.x(), -cp.tangential_damping * vel.y(), 0.0);
      const double cap = cp.friction * normal;
      const double mag = tangential.norm();
      if (mag > cap) tangential *= cap / mag;
      fc.fz += normal;
      fc.tangential += tangential;
      apply_point_force(ws_, body, corner, Vec3(tangential.x(), tangential.y(), normal));
    }
  }

  const Vec3 gravity(0.0, 0.0, options_.gravity ? -model_->gravity : 0.0);
  articulated_body_dynamics(multibody_, state, tau_, gravity, options_.locked, ws_);
  integrate(multibody_, state, ws_, options_.locked, dt);
  if (!state.all_finite()) throw SimulationDiverged("biped state became non-finite");
  return out;
}

FrameSet BipedDynamics::forward_kinematics(const BipedState& state) {
  update_kinematics(multibody_, state, ws_);
  auto pose = [&](int body, const Vec3& local) {
    Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
    T.linear() = ws_.R[body];
    T.translation() = point_position(ws_, body, local);
    return T;
  };
  FrameSet f;
  f.base = pose(0, Vec3::Zero());
  f.head = pose(0, model_->head_offset);
  f.left_foot = pose(KinematicModel::foot_body(Foot::Left), model_->foot.sole_offset);
  f.right_foot = pose(KinematicModel::foot_body(Foot::Right), model_->foot.sole_offset);
  return f;
}

double BipedDynamics::kinetic_energy(const BipedState& state) {
  update_kinematics(multibody_, state, ws_);
  return biped::kinetic_energy(multibody_, state, ws_);
}

double BipedDynamics::potential_energy(const BipedState& state) {
  update_kinematics(multibody_, state, ws_);
  const Vec3 gravity(0.0, 0.0, options_.gravity ? -model_->gravity : 0.0);
  return biped::potential_energy(multibody_, ws_, gravity);
}

}  // namespace biped
