#include "biped/multibody.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "biped/errors.hpp"

namespace biped {

Multibody::Multibody(bool floating_base, double base_mass, const Vec3& base_com,
                     const Mat3& base_inertia_com, std::vector<LinkSpec> links)
    : floating_base_(floating_base), links_(std::move(links)) {
  parents_.push_back(-1);
  inertias_.push_back(spatial_inertia(base_mass, base_com, base_inertia_com));
  masses_.push_back(base_mass);
  coms_.push_back(base_com);
  for (std::size_t j = 0; j < links_.size(); ++j) {
    auto& link = links_[j];
    if (link.parent < 0 || link.parent > static_cast<int>(j)) {
      throw InputError("link '" + link.name + "' must reference an earlier body as parent");
    }
    if (!(link.mass > 0.0)) throw InputError("link '" + link.name + "' needs positive mass");
    if (link.axis.norm() < 1e-12) throw InputError("link '" + link.name + "' has a zero axis");
    link.axis.normalize();
    parents_.push_back(link.parent);
    inertias_.push_back(spatial_inertia(link.mass, link.com, link.inertia_com));
    masses_.push_back(link.mass);
    coms_.push_back(link.com);
  }
}

double Multibody::total_mass() const {
  double m = 0.0;
  for (double b : masses_) m += b;
  return m;
}

bool MultibodyState::all_finite() const {
  return base_position.allFinite() && base_orientation.coeffs().allFinite() &&
         base_linear_velocity.allFinite() && base_angular_velocity.allFinite() && q.allFinite() &&
         qd.allFinite() && std::isfinite(time);
}

MultibodyWorkspace::MultibodyWorkspace(const Multibody& model) {
  const auto n = static_cast<std::size_t>(model.num_bodies());
  X.resize(n);
  R.resize(n);
  p.resize(n);
  v.resize(n);
  c.resize(n, Vec6::Zero());
  IA.resize(n);
  pA.resize(n);
  U.resize(n, Vec6::Zero());
  D.resize(n, 0.0);
  u.resize(n, 0.0);
  a.resize(n, Vec6::Zero());
  f_ext.resize(n, Vec6::Zero());
  qdd = Eigen::VectorXd::Zero(model.num_joints());
}

namespace {

inline Vec6 joint_subspace(const Vec3& axis) {
  Vec6 s;
  s << axis, Vec3::Zero();
  return s;
}

// I * v for a spatial inertia stored as a dense 6x6.
inline Vec6 inertia_times(const Mat6& I, const Vec6& v) { return I * v; }

}  // namespace

void update_kinematics(const Multibody& model, const MultibodyState& state, MultibodyWorkspace& ws) {
  const Mat3 R0 = state.base_orientation.toRotationMatrix();
  ws.R[0] = R0;
  ws.p[0] = state.base_position;
  ws.v[0] << state.base_angular_velocity, R0.transpose() * state.base_linear_velocity;
  ws.f_ext[0].setZero();
  for (int j = 0; j < model.num_joints(); ++j) {
    const int i = j + 1;
    const LinkSpec& link = model.link(j);
    const int parent = model.parent(i);
    auto& X = ws.X[i];
    X.E = axis_rotation(link.axis, state.q[j]).transpose();
    X.r = link.offset;
    ws.R[i] = ws.R[parent] * X.E.transpose();
    ws.p[i] = ws.p[parent] + ws.R[parent] * link.offset;
    const double qd = state.qd[j];
    Vec6 vj;
    vj << link.axis * qd, Vec3::Zero();
    ws.v[i] = X.apply(ws.v[parent]) + vj;
    ws.c[i] = cross_motion(ws.v[i], vj);
    ws.f_ext[i].setZero();
  }
}

void articulated_body_dynamics(const Multibody& model, const MultibodyState& state,
                               const Eigen::VectorXd& tau, const Vec3& gravity,
                               const JointLockMask& locked, MultibodyWorkspace& ws) {
  const int nb = model.num_bodies();
  for (int i = 0; i < nb; ++i) {
    const Mat6& I = model.inertia(i);
    ws.IA[i] = I;
    Vec6 g_body;
    g_body << Vec3::Zero(), ws.R[i].transpose() * gravity;
    ws.pA[i] = cross_force(ws.v[i], inertia_times(I, ws.v[i])) - ws.f_ext[i] - inertia_times(I, g_body);
  }

  for (int i = nb - 1; i >= 1; --i) {
    const int j = i - 1;
    const int parent = model.parent(i);
    const bool is_locked = !locked.empty() && locked[j];
    Mat6 Ia;
    Vec6 pa;
    if (is_locked) {
      Ia = ws.IA[i];
      pa = ws.pA[i] + ws.IA[i] * ws.c[i];
    } else {
      const Vec6 S = joint_subspace(model.link(j).axis);
      ws.U[i] = ws.IA[i] * S;
      ws.D[i] = S.dot(ws.U[i]) + model.link(j).armature;
      ws.u[i] = tau[j] - S.dot(ws.pA[i]);
      Ia = ws.IA[i] - ws.U[i] * ws.U[i].transpose() / ws.D[i];
      pa = ws.pA[i] + Ia * ws.c[i] + ws.U[i] * (ws.u[i] / ws.D[i]);
    }
    ws.IA[parent] += ws.X[i].transform_inertia(Ia);
    ws.pA[parent] += ws.X[i].apply_transpose(pa);
  }

  if (model.floating_base()) {
    ws.a[0] = -ws.IA[0].llt().solve(ws.pA[0]);
  } else {
    ws.a[0].setZero();
  }
  ws.base_acceleration = ws.a[0];

  for (int i = 1; i < nb; ++i) {
    const int j = i - 1;
    const int parent = model.parent(i);
    const Vec6 a_pre = ws.X[i].apply(ws.a[parent]) + ws.c[i];
    if (!locked.empty() && locked[j]) {
      ws.qdd[j] = 0.0;
      ws.a[i] = a_pre;
      continue;
    }
    const double qdd = (ws.u[i] - ws.U[i].dot(a_pre)) / ws.D[i];
    ws.qdd[j] = qdd;
    ws.a[i] = a_pre + joint_subspace(model.link(j).axis) * qdd;
  }
}

void integrate(const Multibody& model, MultibodyState& state, const MultibodyWorkspace& ws,
               const JointLockMask& locked, double dt) {
  if (model.floating_base()) {
    const Vec3 omega = state.base_angular_velocity;
    const Mat3& R0 = ws.R[0];
    const Vec3 v_body = ws.v[0].tail<3>();
    const Vec3 lin_acc_world = R0 * (ws.base_acceleration.tail<3>() + omega.cross(v_body));
    state.base_angular_velocity += dt * ws.base_acceleration.head<3>();
    state.base_linear_velocity += dt * lin_acc_world;
    state.base_position += dt * state.base_linear_velocity;
    const Vec3 dtheta = dt * state.base_angular_velocity;
    const double angle = dtheta.norm();
    if (angle > 0.0) {
      const Eigen::Quaterniond dq(Eigen::AngleAxisd(angle, dtheta / angle));
      state.base_orientation = state.base_orientation * dq;
    }
    state.base_orientation.normalize();
  }
  for (int j = 0; j < model.num_joints(); ++j) {
    if (!locked.empty() && locked[j]) {
      state.qd[j] = 0.0;
      continue;
    }
    state.qd[j] += dt * ws.qdd[j];
    state.q[j] += dt * state.qd[j];
  }
  state.time += dt;
}

Vec3 point_velocity(const MultibodyWorkspace& ws, int body, const Vec3& local) {
  const Vec6& v = ws.v[body];
  return ws.R[body] * (v.tail<3>() + v.head<3>().cross(local));
}

void apply_point_force(MultibodyWorkspace& ws, int body, const Vec3& local, const Vec3& force_world) {
  const Vec3 f = ws.R[body].transpose() * force_world;
  ws.f_ext[body].head<3>() += local.cross(f);
  ws.f_ext[body].tail<3>() += f;
}

double kinetic_energy(const Multibody& model, const MultibodyState& state, const MultibodyWorkspace& ws) {
  double ke = 0.0;
  for (int i = 0; i < model.num_bodies(); ++i) ke += 0.5 * ws.v[i].dot(model.inertia(i) * ws.v[i]);
  for (int j = 0; j < model.num_joints(); ++j) ke += 0.5 * model.link(j).armature * state.qd[j] * state.qd[j];
  return ke;
}

double potential_energy(const Multibody& model, const MultibodyWorkspace& ws, const Vec3& gravity) {
  double pe = 0.0;
  for (int i = 0; i < model.num_bodies(); ++i) {
    const Vec3 com_world = ws.p[i] + ws.R[i] * model.body_com(i);
    pe -= model.body_mass(i) * gravity.dot(com_world);
  }
  return pe;
}

Eigen::VectorXd apparent_joint_inertia(const Multibody& model, const Eigen::VectorXd& q) {
  const int nb = model.num_bodies();
  std::vector<SpatialTransform> X(nb);
  std::vector<Mat6> Ic(nb);
  for (int i = 1; i < nb; ++i) {
    X[i].E = axis_rotation(model.link(i - 1).axis, q[i - 1]).transpose();
    X[i].r = model.link(i - 1).offset;
  }
  for (int i = 0; i < nb; ++i) Ic[i] = model.inertia(i);
  for (int i = nb - 1; i >= 1; --i) Ic[model.parent(i)] += X[i].transform_inertia(Ic[i]);
  Eigen::VectorXd out(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) {
    const Vec6 S = joint_subspace(model.link(j).axis);
    out[j] = S.dot(Ic[j + 1] * S) + model.link(j).armature;
  }
  return out;
}

}  // namespace biped
