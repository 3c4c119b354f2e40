#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>

#include "biped/biped_model.hpp"

namespace biped {

inline constexpr int kNumRewardTerms = 17;

/// Term weights (positive; signs live in the formulas) and the constants the terms use.
struct RewardWeights {
  std::array<double, kNumRewardTerms> w = {3.0,   3.0,  2.0, 0.1, 10.0, 0.0002, 0.01, 0.5, 1.0,
                                           0.02,  0.2,  0.01, 1.0, 0.001, 0.4,  2.0,  100.0};
  double tracking_sigma = 0.25;
  double f_max = 1500.0;             // N
  double z_ref = 0.8;                // m
  double z_terminate = 0.7;          // m
  double stand_still_threshold = 0.1;
  double v_cap = 2.0;                // m/s, foot-speed normaliser
  double fall_angle = 0.5;           // rad, |roll| or |pitch| beyond this is a fall
  double joint_limit_slack = 0.05;   // rad

  double weight(int term) const { return w[term - 1]; }
  void validate() const;
};

nlohmann::json to_json(const RewardWeights& w);
RewardWeights weights_from_json(const nlohmann::json& j);

/// Everything the 17 terms read for one control step.
struct StepContext {
  Vec3 command = Vec3::Zero();  // (vx, vy, yaw rate), heading frame
  double base_vx = 0.0;         // heading frame
  double base_vy = 0.0;
  double base_vz = 0.0;
  double yaw_rate = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double roll_rate = 0.0;
  double pitch_rate = 0.0;
  JointVector torque = JointVector::Zero();
  JointVector action = JointVector::Zero();
  JointVector last_action = JointVector::Zero();
  JointVector q = JointVector::Zero();
  JointVector q_default = JointVector::Zero();
  JointVector qd = JointVector::Zero();
  JointVector qd_prev = JointVector::Zero();
  JointVector qd_prev2 = JointVector::Zero();
  std::array<double, 2> fz{};             // indexed by Foot
  std::array<double, 2> foot_speed_sq{};
  std::array<int, 2> stance{1, 1};        // +1 stance / -1 flight; flight coefficient is the negation
  bool phase_changed = false;
  double base_x = 0.0, base_y = 0.0, base_z = 0.0;
  double head_x = 0.0, head_y = 0.0;
};

struct JointLimits {
  JointVector lower = JointVector::Constant(-1e9);
  JointVector upper = JointVector::Constant(1e9);
};

struct RewardBreakdown {
  std::array<double, kNumRewardTerms> r{};
  double total = 0.0;

  double& term(int i) { return r[i - 1]; }
  double term(int i) const { return r[i - 1]; }
};

std::string reward_term_name(int term);

struct TrackingTerms {
  double r1, r2;
};
struct BaseMotionTerms {
  double r3, r4, r5, r16, r17;
};
struct EffortTerms {
  double r6, r7, r14;
};
struct PostureTerms {
  double r8, r15;
};
struct GaitTerms {
  double r10, r11, r12, r13;
};
struct Termination {
  bool terminated;
  double r9;
};

TrackingTerms tracking_rewards(const StepContext& ctx, const RewardWeights& w);
BaseMotionTerms base_motion_penalties(const StepContext& ctx, const RewardWeights& w);
EffortTerms effort_penalties(const StepContext& ctx, const RewardWeights& w);
PostureTerms posture_penalties(const StepContext& ctx, const RewardWeights& w);
GaitTerms gait_rewards(const StepContext& ctx, const RewardWeights& w);
Termination termination(const StepContext& ctx, const RewardWeights& w, const JointLimits& limits);

/// All 17 terms; total summed r1..r17 in order. Throws RewardError on a non-finite term.
RewardBreakdown evaluate_all(const StepContext& ctx, const RewardWeights& w, const JointLimits& limits);

/// Total from the terms, in the same order evaluate_all uses.
double sum_terms(const std::array<double, kNumRewardTerms>& r);

}  // namespace biped
