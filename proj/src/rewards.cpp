#include "biped/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "biped/errors.hpp"

namespace biped {

void RewardWeights::validate() const {
  for (int i = 0; i < kNumRewardTerms; ++i) {
    if (!(w[i] > 0.0)) throw ConfigError("rewards: weight w" + std::to_string(i + 1) + " must be > 0");
  }
  if (!(tracking_sigma > 0.0)) throw ConfigError("rewards: tracking_sigma must be > 0");
  if (!(f_max > 0.0) || !(v_cap > 0.0)) throw ConfigError("rewards: f_max and v_cap must be > 0");
  if (!(z_terminate < z_ref)) throw ConfigError("rewards: z_terminate must be below z_ref");
  if (!(fall_angle > 0.0) || joint_limit_slack < 0.0 || stand_still_threshold < 0.0) {
    throw ConfigError("rewards: thresholds out of range");
  }
}

nlohmann::json to_json(const RewardWeights& w) {
  nlohmann::json weights = nlohmann::json::object();
  for (int i = 0; i < kNumRewardTerms; ++i) weights["w" + std::to_string(i + 1)] = w.w[i];
  return {{"weights", weights},
          {"tracking_sigma", w.tracking_sigma},
          {"f_max", w.f_max},
          {"z_ref", w.z_ref},
          {"z_terminate", w.z_terminate},
          {"stand_still_threshold", w.stand_still_threshold},
          {"v_cap", w.v_cap},
          {"fall_angle", w.fall_angle},
          {"joint_limit_slack", w.joint_limit_slack}};
}

RewardWeights weights_from_json(const nlohmann::json& j) {
  RewardWeights w;
  try {
    if (j.contains("weights")) {
      for (const auto& [key, value] : j.at("weights").items()) {
        if (key.size() < 2 || key[0] != 'w') throw ConfigError("rewards: unknown weight key '" + key + "'");
        const int idx = std::stoi(key.substr(1));
        if (idx < 1 || idx > kNumRewardTerms) throw ConfigError("rewards: unknown weight key '" + key + "'");
        w.w[idx - 1] = value.get<double>();
      }
    }
    w.tracking_sigma = j.value("tracking_sigma", w.tracking_sigma);
    w.f_max = j.value("f_max", w.f_max);
    w.z_ref = j.value("z_ref", w.z_ref);
    w.z_terminate = j.value("z_terminate", w.z_terminate);
    w.stand_still_threshold = j.value("stand_still_threshold", w.stand_still_threshold);
    w.v_cap = j.value("v_cap", w.v_cap);
    w.fall_angle = j.value("fall_angle", w.fall_angle);
    w.joint_limit_slack = j.value("joint_limit_slack", w.joint_limit_slack);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("rewards: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("rewards: malformed weight key");
  }
  w.validate();
  return w;
}

std::string reward_term_name(int term) { return "r" + std::to_string(term); }

TrackingTerms tracking_rewards(const StepContext& c, const RewardWeights& w) {
  const double ex = c.command.x() - c.base_vx;
  const double ey = c.command.y() - c.base_vy;
  const double eyaw = c.command.z() - c.yaw_rate;
  return {w.weight(1) * std::exp(-(ex * ex + ey * ey) / w.tracking_sigma),
          w.weight(2) * std::exp(-(eyaw * eyaw) / w.tracking_sigma)};
}

BaseMotionTerms base_motion_penalties(const StepContext& c, const RewardWeights& w) {
  const double dx = c.base_x - c.head_x;
  const double dy = c.base_y - c.head_y;
  const double dz = c.base_z - w.z_ref;
  return {-w.weight(3) * c.base_vz * c.base_vz,
          -w.weight(4) * (c.roll_rate * c.roll_rate + c.pitch_rate * c.pitch_rate),
          -w.weight(5) * (c.roll * c.roll + c.pitch * c.pitch),
          -w.weight(16) * (dx * dx + dy * dy),
          -w.weight(17) * dz * dz};
}

EffortTerms effort_penalties(const StepContext& c, const RewardWeights& w) {
  const double torque = c.torque.norm() + c.torque.cwiseAbs().sum();
  const double action_rate = (c.action - c.last_action).squaredNorm();
  const double accel = (c.qd - c.qd_prev).squaredNorm() + (c.qd - 2.0 * c.qd_prev + c.qd_prev2).squaredNorm();
  return {-w.weight(6) * torque, -w.weight(7) * action_rate, -w.weight(14) * accel};
}

PostureTerms posture_penalties(const StepContext& c, const RewardWeights& w) {
  const JointVector dev = c.q - c.q_default;
  const double r15 = -w.weight(15) * dev.squaredNorm();
  const double r8 = c.command.norm() < w.stand_still_threshold ? -w.weight(8) * dev.cwiseAbs().sum() : 0.0;
  return {r8, r15};
}

GaitTerms gait_rewards(const StepContext& c, const RewardWeights& w) {
  double stance = 0.0, flight = 0.0, excess = 0.0;
  const double v_cap_sq = w.v_cap * w.v_cap;
  for (int f = 0; f < 2; ++f) {
    stance += c.stance[f] * std::min(c.fz[f], w.f_max) / w.f_max;
    flight += -c.stance[f] * std::min(c.foot_speed_sq[f], v_cap_sq) / v_cap_sq;
    excess += std::max(0.0, c.fz[f] - w.f_max);
  }
  return {w.weight(10) * stance, w.weight(11) * flight, -w.weight(12) * excess,
          c.phase_changed ? w.weight(13) : 0.0};
}

Termination termination(const StepContext& c, const RewardWeights& w, const JointLimits& limits) {
  bool out_of_limits = false;
  for (int j = 0; j < kNumJoints; ++j) {
    if (c.q[j] < limits.lower[j] - w.joint_limit_slack || c.q[j] > limits.upper[j] + w.joint_limit_slack) {
      out_of_limits = true;
    }
  }
  const bool falling = std::abs(c.roll) > w.fall_angle || std::abs(c.pitch) > w.fall_angle;
  const bool terminated = c.base_z < w.z_terminate || out_of_limits || falling;
  return {terminated, terminated ? -w.weight(9) : 0.0};
}

double sum_terms(const std::array<double, kNumRewardTerms>& r) {
  double total = 0.0;
  for (double x : r) total += x;
  return total;
}

RewardBreakdown evaluate_all(const StepContext& ctx, const RewardWeights& w, const JointLimits& limits) {
  RewardBreakdown b;
  const auto track = tracking_rewards(ctx, w);
  const auto base = base_motion_penalties(ctx, w);
  const auto effort = effort_penalties(ctx, w);
  const auto posture = posture_penalties(ctx, w);
  const auto gait = gait_rewards(ctx, w);
  const auto term = termination(ctx, w, limits);
  b.term(1) = track.r1;
  b.term(2) = track.r2;
  b.term(3) = base.r3;
  b.term(4) = base.r4;
  b.term(5) = base.r5;
  b.term(6) = effort.r6;
  b.term(7) = effort.r7;
  b.term(8) = posture.r8;
  b.term(9) = term.r9;
  b.term(10) = gait.r10;
  b.term(11) = gait.r11;
  b.term(12) = gait.r12;
  b.term(13) = gait.r13;
  b.term(14) = effort.r14;
  b.term(15) = posture.r15;
  b.term(16) = base.r16;
  b.term(17) = base.r17;
  for (int i = 1; i <= kNumRewardTerms; ++i) {
    if (!std::isfinite(b.term(i))) throw RewardError("reward term r" + std::to_string(i) + " is not finite");
  }
  b.total = sum_terms(b.r);
  return b;
}

}  // namespace biped
