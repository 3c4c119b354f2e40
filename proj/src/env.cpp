#include "biped/env.hpp"

#include <algorithm>
#include <cmath>

#include "biped/config.hpp"
#include "biped/errors.hpp"

namespace biped {

namespace {

void check_range(const AxisRange& r, const char* axis) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw ConfigError(std::string("commands: bad range for ") + axis);
  }
}

nlohmann::json range_json(const AxisRange& r) { return nlohmann::json::array({r.lo, r.hi}); }

AxisRange range_from(const nlohmann::json& j, const char* key, AxisRange fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("commands: ") + key + " must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

void CommandRanges::validate() const {
  check_range(vx, "vx");
  check_range(vy, "vy");
  check_range(wz, "wz");
  if (!(resample_interval > 0.0)) throw ConfigError("commands: resample_interval must be > 0");
  if (!(p_zero >= 0.0 && p_zero <= 1.0)) throw ConfigError("commands: p_zero must be in [0, 1]");
}

Vec3 sample_command(Rng& rng, const CommandRanges& r) {
  if (uniform01(rng) < r.p_zero) return Vec3::Zero();
  const double vx = uniform(rng, r.vx.lo, r.vx.hi);
  const double vy = uniform(rng, r.vy.lo, r.vy.hi);
  const double wz = uniform(rng, r.wz.lo, r.wz.hi);
  return {vx, vy, wz};
}

Vec3 clamp_command(const Vec3& c, const CommandRanges& r) {
  auto one = [](double v, const AxisRange& a) { return std::isfinite(v) ? std::clamp(v, a.lo, a.hi) : 0.0; };
  return {one(c.x(), r.vx), one(c.y(), r.vy), one(c.z(), r.wz)};
}

void EnvConfig::validate() const {
  if (!model) throw ConfigError("env: no model");
  model->validate();
  gait.validate();
  rewards.validate();
  commands.validate();
  if (substeps < 1) throw ConfigError("env: substeps must be >= 1");
  if (std::abs(control_dt - substeps * model->physics_dt) > 1e-12 * control_dt) {
    throw ConfigError("env: control_dt must equal substeps * physics_dt");
  }
  if (max_episode_steps < 1) throw ConfigError("env: max_episode_steps must be >= 1");
  if (!(action_scale > 0.0)) throw ConfigError("env: action_scale must be > 0");
  if (!(reset_noise >= 0.0 && reset_noise <= 0.02)) throw ConfigError("env: reset_noise must be in [0, 0.02]");
  const double steps = commands.resample_interval / control_dt;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw ConfigError("env: resample_interval must be a multiple of control_dt");
  }
}

nlohmann::json to_json(const GaitSchedule& g) {
  return {{"t_double_support", g.t_double_support}, {"t_single_support", g.t_single_support}};
}

GaitSchedule gait_from_json(const nlohmann::json& j) {
  GaitSchedule g;
  g.t_double_support = j.value("t_double_support", g.t_double_support);
  g.t_single_support = j.value("t_single_support", g.t_single_support);
  return g;
}

nlohmann::json to_json(const EnvConfig& c) {
  return {{"schema", kEnvSchema},
          {"model", to_json(*c.model)},
          {"gait", to_json(c.gait)},
          {"rewards", to_json(c.rewards)},
          {"commands",
           {{"vx", range_json(c.commands.vx)},
            {"vy", range_json(c.commands.vy)},
            {"wz", range_json(c.commands.wz)},
            {"resample_interval", c.commands.resample_interval},
            {"p_zero", c.commands.p_zero}}},
          {"control_dt", c.control_dt},
          {"substeps", c.substeps},
          {"max_episode_steps", c.max_episode_steps},
          {"action_scale", c.action_scale},
          {"reset_noise", c.reset_noise},
          {"seed", c.seed}};
}

EnvConfig env_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  require_schema(j, kEnvSchema, "env config");
  require_known_keys(j,
                     {"schema", "model", "gait", "rewards", "commands", "control_dt", "substeps", "max_episode_steps",
                      "action_scale", "reset_noise", "seed"},
                     "env config");
  EnvConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.is_string()) {
        std::filesystem::path p = m.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.model = std::make_shared<KinematicModel>(load_model(p));
      } else {
        c.model = std::make_shared<KinematicModel>(model_from_json(m));
      }
    }
    if (j.contains("gait")) c.gait = gait_from_json(j.at("gait"));
    if (j.contains("rewards")) c.rewards = weights_from_json(j.at("rewards"));
    if (j.contains("commands")) {
      const auto& cj = j.at("commands");
      require_known_keys(cj, {"vx", "vy", "wz", "resample_interval", "p_zero"}, "env config commands");
      c.commands.vx = range_from(cj, "vx", c.commands.vx);
      c.commands.vy = range_from(cj, "vy", c.commands.vy);
      c.commands.wz = range_from(cj, "wz", c.commands.wz);
      c.commands.resample_interval = cj.value("resample_interval", c.commands.resample_interval);
      c.commands.p_zero = cj.value("p_zero", c.commands.p_zero);
    }
    c.control_dt = j.value("control_dt", c.control_dt);
    c.substeps = j.value("substeps", c.substeps);
    c.max_episode_steps = j.value("max_episode_steps", c.max_episode_steps);
    c.action_scale = j.value("action_scale", c.action_scale);
    c.reset_noise = j.value("reset_noise", c.reset_noise);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("env config: ") + e.what());
  }
  c.validate();
  return c;
}

EnvConfig load_env_config(const std::filesystem::path& path) {
  return env_config_from_json(load_json_file(path), path.parent_path());
}

Observation build_observation(const ObservationInputs& in) {
  Observation o;
  o[obs_slot::kYawRate] = in.yaw_rate * kYawRateScale;
  o.segment<3>(obs_slot::kGravity) = in.projected_gravity;
  o.segment<3>(obs_slot::kCommand) = in.command.cwiseProduct(kCommandScale);
  o.segment<kNumJoints>(obs_slot::kJointPos) = in.joint_pos;
  o.segment<kNumJoints>(obs_slot::kJointVel) = in.joint_vel;
  o.segment<kNumJoints>(obs_slot::kLastAction) = in.last_action;
  o[obs_slot::kClock] = in.clock.sin_phase;
  o[obs_slot::kClock + 1] = in.clock.cos_phase;
  return o;
}

LocomotionEnv::LocomotionEnv(EnvConfig config)
    : config_(std::move(config)), dynamics_((config_.validate(), config_.model)) {
  limits_.lower = config_.model->lower_limits();
  limits_.upper = config_.model->upper_limits();
  q_default_ = config_.model->q_default();
  action_lower_ = (limits_.lower - q_default_) / config_.action_scale;
  action_upper_ = (limits_.upper - q_default_) / config_.action_scale;
  resample_every_ = static_cast<int>(std::lround(config_.commands.resample_interval / config_.control_dt));
  reset(config_.seed);
}

Observation LocomotionEnv::reset(std::uint64_t seed) {
  rng_ = make_rng(seed);
  return reset();
}

Observation LocomotionEnv::reset() {
  state_ = dynamics_.standing_state();
  for (int j = 0; j < kNumJoints; ++j) {
    const double noise = uniform(rng_, -config_.reset_noise, config_.reset_noise);
    state_.q[j] = std::clamp(q_default_[j] + noise, limits_.lower[j], limits_.upper[j]);
  }
  if (!command_pinned_) command_ = sample_command(rng_, config_.commands);
  steps_ = 0;
  last_action_.setZero();
  qd_prev_.setZero();
  qd_prev2_.setZero();
  obs_ = make_observation();
  return obs_;
}

void LocomotionEnv::set_command(const std::optional<Vec3>& command) {
  command_pinned_ = command.has_value();
  if (command) command_ = clamp_command(*command, config_.commands);
  obs_.segment<3>(obs_slot::kCommand) = command_.cwiseProduct(kCommandScale);
}

Observation LocomotionEnv::make_observation() const {
  ObservationInputs in;
  const EulerZYX angles = euler_zyx(state_.base_orientation);
  in.yaw_rate = euler_zyx_rates(angles, state_.base_angular_velocity).yaw;
  in.projected_gravity = projected_gravity(state_.base_orientation);
  in.command = command_;
  in.joint_pos = state_.q - q_default_;
  in.joint_vel = state_.qd;
  in.last_action = last_action_;
  in.clock = clock_signal(config_.gait, episode_time());
  return build_observation(in);
}

Transition LocomotionEnv::step(const JointVector& action) {
  if (!action.allFinite()) throw InputError("step: action must be finite");

  const JointVector applied = action.cwiseMax(action_lower_).cwiseMin(action_upper_);
  const JointVector targets = q_default_ + config_.action_scale * applied;

  const double t_before = episode_time();
  Transition tr;
  std::array<double, 2> fz_sum{}, speed_sum{};
  StepOutput sim;
  bool diverged = false;
  try {
    for (int k = 0; k < config_.substeps; ++k) {
      sim = dynamics_.step(state_, targets, config_.model->physics_dt);
      const auto loads = contact_forces(sim.contact);
      for (int f = 0; f < 2; ++f) {
        fz_sum[f] += loads[f].fz;
        speed_sum[f] += loads[f].speed_sq;
      }
    }
  } catch (const SimulationDiverged&) {
    diverged = true;
  }
  ++steps_;

  if (steps_ == 1) {
    last_action_ = applied;
    qd_prev_ = state_.qd;
    qd_prev2_ = state_.qd;
  }

  if (diverged) {
    // nothing downstream can be evaluated on a non-finite state; end the episode
    tr.breakdown.term(9) = -config_.rewards.weight(9);
    tr.breakdown.total = sum_terms(tr.breakdown.r);
    tr.reward = tr.breakdown.total;
    tr.terminated = true;
    tr.info.diverged = true;
    tr.info.command = command_;
    tr.info.episode_step = steps_;
    tr.observation = obs_;
    return tr;
  }

  StepContext& ctx = tr.context;
  const EulerZYX angles = euler_zyx(state_.base_orientation);
  const EulerZYX rates = euler_zyx_rates(angles, state_.base_angular_velocity);
  const double cy = std::cos(angles.yaw), sy = std::sin(angles.yaw);
  const Vec3& v = state_.base_linear_velocity;
  ctx.command = command_;
  ctx.base_vx = cy * v.x() + sy * v.y();
  ctx.base_vy = -sy * v.x() + cy * v.y();
  ctx.base_vz = v.z();
  ctx.yaw_rate = rates.yaw;
  ctx.roll = angles.roll;
  ctx.pitch = angles.pitch;
  ctx.roll_rate = rates.roll;
  ctx.pitch_rate = rates.pitch;
  ctx.torque = sim.torque;
  ctx.action = applied;
  ctx.last_action = last_action_;
  ctx.q = state_.q;
  ctx.q_default = q_default_;
  ctx.qd = state_.qd;
  ctx.qd_prev = qd_prev_;
  ctx.qd_prev2 = qd_prev2_;
  const double t_after = episode_time();
  const GaitSegment seg = phase_at(config_.gait, t_after).segment;
  for (Foot foot : {Foot::Left, Foot::Right}) {
    const int f = static_cast<int>(foot);
    ctx.fz[f] = fz_sum[f] / config_.substeps;
    ctx.foot_speed_sq[f] = speed_sum[f] / config_.substeps;
    ctx.stance[f] = stance_coefficient(seg, foot);
  }
  ctx.phase_changed = seg != phase_at(config_.gait, t_before).segment;
  const FrameSet frames = dynamics_.forward_kinematics(state_);
  ctx.base_x = state_.base_position.x();
  ctx.base_y = state_.base_position.y();
  ctx.base_z = state_.base_position.z();
  ctx.head_x = frames.head.translation().x();
  ctx.head_y = frames.head.translation().y();

  tr.breakdown = evaluate_all(ctx, config_.rewards, limits_);
  tr.reward = tr.breakdown.total;
  tr.terminated = tr.breakdown.term(9) != 0.0;
  tr.truncated = !tr.terminated && steps_ >= config_.max_episode_steps;

  tr.info.command = command_;
  tr.info.base_position = state_.base_position;
  tr.info.base_velocity = Vec3(ctx.base_vx, ctx.base_vy, ctx.base_vz);
  tr.info.yaw_rate = rates.yaw;
  tr.info.roll = angles.roll;
  tr.info.pitch = angles.pitch;
  tr.info.yaw = angles.yaw;
  tr.info.episode_step = steps_;

  qd_prev2_ = qd_prev_;
  qd_prev_ = state_.qd;
  last_action_ = applied;
  if (!command_pinned_ && steps_ % resample_every_ == 0) command_ = sample_command(rng_, config_.commands);

  obs_ = make_observation();
  tr.observation = obs_;
  return tr;
}

void LocomotionEnv::save(BinaryWriter& out) const {
  out.put_string(rng_state(rng_));
  out.put_matrix(state_.base_position);
  out.put_matrix(state_.base_orientation.coeffs());
  out.put_matrix(state_.base_linear_velocity);
  out.put_matrix(state_.base_angular_velocity);
  out.put_matrix(state_.q);
  out.put_matrix(state_.qd);
  out.put<double>(state_.time);
  out.put_matrix(command_);
  out.put<std::uint8_t>(command_pinned_ ? 1 : 0);
  out.put<std::int64_t>(steps_);
  out.put_matrix(last_action_);
  out.put_matrix(qd_prev_);
  out.put_matrix(qd_prev2_);
}

void LocomotionEnv::load(BinaryReader& in) {
  set_rng_state(rng_, in.get_string());
  in.get_into(state_.base_position);
  Eigen::Vector4d coeffs;
  in.get_into(coeffs);
  state_.base_orientation.coeffs() = coeffs;
  in.get_into(state_.base_linear_velocity);
  in.get_into(state_.base_angular_velocity);
  in.get_into(state_.q);
  in.get_into(state_.qd);
  state_.time = in.get<double>();
  in.get_into(command_);
  command_pinned_ = in.get<std::uint8_t>() != 0;
  steps_ = static_cast<int>(in.get<std::int64_t>());
  in.get_into(last_action_);
  in.get_into(qd_prev_);
  in.get_into(qd_prev2_);
  obs_ = make_observation();
}

}  // namespace biped
