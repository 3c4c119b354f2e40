#include "biped/biped_model.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Cholesky>

#include "biped/errors.hpp"

namespace biped {

namespace {

Vec3 mirror_y(Vec3 v) {
  v.y() = -v.y();
  return v;
}

Vec3 vec3_from(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw ConfigError(std::string(key) + " must be a 3-vector");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

nlohmann::json vec3_to(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

// [ixx, iyy, izz, ixy, ixz, iyz]
Mat3 inertia_from(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 6) throw ConfigError(std::string(key) + " must have 6 entries");
  Mat3 m;
  const double ixx = a[0], iyy = a[1], izz = a[2], ixy = a[3], ixz = a[4], iyz = a[5];
  m << ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz;
  return m;
}

nlohmann::json inertia_to(const Mat3& m) {
  return nlohmann::json::array({m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)});
}

bool is_spd(const Mat3& m) {
  if (!m.isApprox(m.transpose(), 1e-12)) return false;
  Eigen::LLT<Mat3> llt(m);
  return llt.info() == Eigen::Success;
}

LegJointSpec joint(std::string name, Vec3 axis, Vec3 offset, double mass, Vec3 com, Vec3 inertia_diag,
                   double armature, double q_default, double lower, double upper, double torque_limit,
                   double kp) {
  LegJointSpec s;
  s.name = std::move(name);
  s.axis = axis;
  s.offset = offset;
  s.mass = mass;
  s.com = com;
  s.inertia = inertia_diag.asDiagonal();
  s.armature = armature;
  s.q_default = q_default;
  s.lower = lower;
  s.upper = upper;
  s.torque_limit = torque_limit;
  s.kp = kp;
  return s;
}

}  // namespace

std::array<Vec3, 4> FootGeometry::corners() const {
  return {sole_offset + Vec3(front, half_width, 0.0), sole_offset + Vec3(front, -half_width, 0.0),
          sole_offset + Vec3(back, half_width, 0.0), sole_offset + Vec3(back, -half_width, 0.0)};
}

KinematicModel default_model() {
  KinematicModel m;
  // clang-format off
  m.leg = {
    joint("hip_yaw",     Vec3::UnitZ(), {0, 0, 0},     1.0, {0, 0, -0.02}, {0.002, 0.002, 0.002},  0.05,  0.0,  -0.6, 0.6,  100, 150),
    joint("hip_roll",    Vec3::UnitX(), {0, 0, -0.05}, 1.5, {0, 0, 0},     {0.003, 0.003, 0.003},  0.10,  0.0,  -0.5, 0.5,  200, 400),
    joint("hip_pitch",   Vec3::UnitY(), {0, 0, 0},     6.0, {0, 0, -0.15}, {0.06, 0.06, 0.01},     0.10, -0.25, -1.6, 0.8,  250, 800),
    joint("knee",        Vec3::UnitY(), {0, 0, -0.32}, 3.5, {0, 0, -0.14}, {0.035, 0.035, 0.005},  0.10,  0.5,   0.0, 2.2,  250, 800),
    joint("ankle_pitch", Vec3::UnitY(), {0, 0, -0.32}, 0.5, {0, 0, 0},     {0.001, 0.001, 0.001},  0.20, -0.25, -1.0, 0.8,  200, 1000),
    joint("ankle_roll",  Vec3::UnitX(), {0, 0, 0},     1.5, {0.02, 0, -0.04}, {0.003, 0.008, 0.009}, 0.20, 0.0, -0.4, 0.4, 120, 300),
  };
  // clang-format on
  return m;
}

void KinematicModel::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model: " + what); };
  if (!(gravity >= 0.0)) fail("gravity must be >= 0");
  if (!(physics_dt > 0.0 && physics_dt <= 0.01)) fail("physics_dt must be in (0, 0.01]");
  if (!(base_mass > 0.0)) fail("base mass must be > 0");
  if (!is_spd(base_inertia)) fail("base inertia must be symmetric positive definite");
  for (const auto& j : leg) {
    if (!(j.mass > 0.0)) fail(j.name + ": mass must be > 0");
    if (!is_spd(j.inertia)) fail(j.name + ": inertia must be symmetric positive definite");
    if (j.axis.norm() < 1e-9) fail(j.name + ": zero axis");
    if (!(j.lower < j.upper)) fail(j.name + ": lower limit must be below upper limit");
    if (j.q_default < j.lower || j.q_default > j.upper) fail(j.name + ": q_default outside limits");
    if (!(j.torque_limit > 0.0)) fail(j.name + ": torque limit must be > 0");
    if (!(j.kp > 0.0)) fail(j.name + ": kp must be > 0");
    if (j.armature < 0.0) fail(j.name + ": armature must be >= 0");
  }
  if (!(foot.front > foot.back) || !(foot.half_width > 0.0)) fail("foot geometry is degenerate");
  if (!(contact.stiffness > 0.0) || contact.damping < 0.0 || contact.tangential_damping < 0.0 ||
      contact.friction < 0.0) {
    fail("contact parameters out of range");
  }
}

JointVector KinematicModel::q_default() const {
  JointVector q;
  for (int k = 0; k < kJointsPerLeg; ++k) q[k] = q[k + kJointsPerLeg] = leg[k].q_default;
  return q;
}

JointVector KinematicModel::lower_limits() const {
  JointVector q;
  for (int k = 0; k < kJointsPerLeg; ++k) q[k] = q[k + kJointsPerLeg] = leg[k].lower;
  return q;
}

JointVector KinematicModel::upper_limits() const {
  JointVector q;
  for (int k = 0; k < kJointsPerLeg; ++k) q[k] = q[k + kJointsPerLeg] = leg[k].upper;
  return q;
}

JointVector KinematicModel::torque_limits() const {
  JointVector q;
  for (int k = 0; k < kJointsPerLeg; ++k) q[k] = q[k + kJointsPerLeg] = leg[k].torque_limit;
  return q;
}

Multibody KinematicModel::build_multibody(bool floating_base) const {
  std::vector<LinkSpec> links;
  for (int side = 0; side < 2; ++side) {
    const bool right = side == 1;
    for (int k = 0; k < kJointsPerLeg; ++k) {
      const auto& j = leg[k];
      LinkSpec l;
      l.name = std::string(right ? "right_" : "left_") + j.name;
      l.parent = k == 0 ? 0 : side * kJointsPerLeg + k;
      Vec3 offset = k == 0 ? Vec3(hip_offset + j.offset) : j.offset;
      l.offset = right ? mirror_y(offset) : offset;
      l.axis = j.axis;
      l.mass = j.mass;
      l.com = right ? mirror_y(j.com) : j.com;
      l.inertia_com = j.inertia;
      if (right) {
        // reflection across y flips the sign of products involving y
        l.inertia_com(0, 1) = l.inertia_com(1, 0) = -j.inertia(0, 1);
        l.inertia_com(1, 2) = l.inertia_com(2, 1) = -j.inertia(1, 2);
      }
      l.armature = j.armature;
      links.push_back(std::move(l));
    }
  }
  return Multibody(floating_base, base_mass, base_com, base_inertia, std::move(links));
}

double KinematicModel::standing_base_height() const {
  const Multibody mb = build_multibody(true);
  MultibodyState s;
  s.q = q_default();
  s.qd = Eigen::VectorXd::Zero(kNumJoints);
  MultibodyWorkspace ws(mb);
  update_kinematics(mb, s, ws);
  double lowest = 0.0;
  for (Foot f : {Foot::Left, Foot::Right}) {
    for (const Vec3& c : foot.corners()) lowest = std::min(lowest, point_position(ws, foot_body(f), c).z());
  }
  return -lowest;
}

double KinematicModel::total_mass() const {
  double m = base_mass;
  for (const auto& j : leg) m += 2.0 * j.mass;
  return m;
}

nlohmann::json to_json(const KinematicModel& m) {
  nlohmann::json legs = nlohmann::json::array();
  for (const auto& j : m.leg) {
    nlohmann::json e = {{"name", j.name},         {"axis", vec3_to(j.axis)},
                        {"offset", vec3_to(j.offset)}, {"mass", j.mass},
                        {"com", vec3_to(j.com)},   {"inertia", inertia_to(j.inertia)},
                        {"armature", j.armature}, {"q_default", j.q_default},
                        {"limits", {j.lower, j.upper}}, {"torque_limit", j.torque_limit},
                        {"kp", j.kp}};
    if (j.kd >= 0.0) e["kd"] = j.kd;
    legs.push_back(std::move(e));
  }
  return {
      {"schema", kModelSchema},
      {"gravity", m.gravity},
      {"physics_dt", m.physics_dt},
      {"base",
       {{"mass", m.base_mass},
        {"com", vec3_to(m.base_com)},
        {"inertia", inertia_to(m.base_inertia)},
        {"head_offset", vec3_to(m.head_offset)},
        {"hip_offset", vec3_to(m.hip_offset)}}},
      {"leg", legs},
      {"foot",
       {{"sole_offset", vec3_to(m.foot.sole_offset)},
        {"front", m.foot.front},
        {"back", m.foot.back},
        {"half_width", m.foot.half_width}}},
      {"contact",
       {{"stiffness", m.contact.stiffness},
        {"damping", m.contact.damping},
        {"tangential_damping", m.contact.tangential_damping},
        {"friction", m.contact.friction}}},
      {"joint_limit", {{"stiffness", m.joint_limit.stiffness}, {"damping", m.joint_limit.damping}}},
  };
}

KinematicModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema", std::string()) != kModelSchema) {
      throw ConfigError(std::string("model: expected schema '") + kModelSchema + "'");
    }
    KinematicModel m = default_model();
    m.gravity = j.value("gravity", m.gravity);
    m.physics_dt = j.value("physics_dt", m.physics_dt);
    if (j.contains("base")) {
      const auto& b = j.at("base");
      m.base_mass = b.value("mass", m.base_mass);
      if (b.contains("com")) m.base_com = vec3_from(b, "com");
      if (b.contains("inertia")) m.base_inertia = inertia_from(b, "inertia");
      if (b.contains("head_offset")) m.head_offset = vec3_from(b, "head_offset");
      if (b.contains("hip_offset")) m.hip_offset = vec3_from(b, "hip_offset");
    }
    if (j.contains("leg")) {
      const auto& legs = j.at("leg");
      if (!legs.is_array() || legs.size() != kJointsPerLeg) throw ConfigError("model: leg must list 6 joints");
      for (int k = 0; k < kJointsPerLeg; ++k) {
        const auto& e = legs[k];
        auto& s = m.leg[k];
        s.name = e.value("name", s.name);
        if (e.contains("axis")) s.axis = vec3_from(e, "axis");
        if (e.contains("offset")) s.offset = vec3_from(e, "offset");
        s.mass = e.value("mass", s.mass);
        if (e.contains("com")) s.com = vec3_from(e, "com");
        if (e.contains("inertia")) s.inertia = inertia_from(e, "inertia");
        s.armature = e.value("armature", s.armature);
        s.q_default = e.value("q_default", s.q_default);
        if (e.contains("limits")) {
          s.lower = e.at("limits").at(0).get<double>();
          s.upper = e.at("limits").at(1).get<double>();
        }
        s.torque_limit = e.value("torque_limit", s.torque_limit);
        s.kp = e.value("kp", s.kp);
        s.kd = e.value("kd", -1.0);
      }
    }
    if (j.contains("foot")) {
      const auto& f = j.at("foot");
      if (f.contains("sole_offset")) m.foot.sole_offset = vec3_from(f, "sole_offset");
      m.foot.front = f.value("front", m.foot.front);
      m.foot.back = f.value("back", m.foot.back);
      m.foot.half_width = f.value("half_width", m.foot.half_width);
    }
    if (j.contains("contact")) {
      const auto& c = j.at("contact");
      m.contact.stiffness = c.value("stiffness", m.contact.stiffness);
      m.contact.damping = c.value("damping", m.contact.damping);
      m.contact.tangential_damping = c.value("tangential_damping", m.contact.tangential_damping);
      m.contact.friction = c.value("friction", m.contact.friction);
    }
    if (j.contains("joint_limit")) {
      const auto& c = j.at("joint_limit");
      m.joint_limit.stiffness = c.value("stiffness", m.joint_limit.stiffness);
      m.joint_limit.damping = c.value("damping", m.joint_limit.damping);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

KinematicModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("model config " + path.string() + ": " + e.what());
  }
}

}  // namespace biped
