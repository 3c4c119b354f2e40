#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "biped/dynamics.hpp"
#include "biped/gait_clock.hpp"
#include "biped/rewards.hpp"
#include "biped/rng.hpp"
#include "biped/serialize.hpp"

namespace biped {

inline constexpr int kObsDim = 45;
inline constexpr int kActDim = kNumJoints;
inline constexpr char kEnvSchema[] = "biped-env/1";

using Observation = Eigen::Matrix<double, kObsDim, 1>;

/// Slot offsets of the observation layout.
namespace obs_slot {
inline constexpr int kYawRate = 0;
inline constexpr int kGravity = 1;
inline constexpr int kCommand = 4;
inline constexpr int kJointPos = 7;
inline constexpr int kJointVel = 19;
inline constexpr int kLastAction = 31;
inline constexpr int kClock = 43;
}  // namespace obs_slot

inline constexpr double kYawRateScale = 0.25;
inline const Vec3 kCommandScale{2.0, 2.0, 0.25};

struct AxisRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct CommandRanges {
  AxisRange vx{-0.3, 1.0};   // m/s
  AxisRange vy{-0.3, 0.3};   // m/s
  AxisRange wz{-0.5, 0.5};   // rad/s
  double resample_interval = 5.0;  // s
  double p_zero = 0.1;

  void validate() const;
};

/// With probability p_zero the zero command, otherwise uniform per axis.
Vec3 sample_command(Rng& rng, const CommandRanges& ranges);

/// Per-axis clamp into the ranges. Non-finite components become 0.
Vec3 clamp_command(const Vec3& command, const CommandRanges& ranges);

struct EnvConfig {
  std::shared_ptr<const KinematicModel> model = std::make_shared<KinematicModel>(default_model());
  GaitSchedule gait;
  RewardWeights rewards;
  CommandRanges commands;
  double control_dt = 0.02;  // s
  int substeps = 20;
  int max_episode_steps = 1000;
  double action_scale = 0.5;   // rad per unit action around q_default
  double reset_noise = 0.02;   // rad, uniform on each joint
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const EnvConfig& config);
/// `base_dir` resolves a relative "model" path.
EnvConfig env_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
EnvConfig load_env_config(const std::filesystem::path& path);

nlohmann::json to_json(const GaitSchedule& gait);
GaitSchedule gait_from_json(const nlohmann::json& j);

/// Inputs to the observation, all from the same control step.
struct ObservationInputs {
  double yaw_rate = 0.0;
  Vec3 projected_gravity = Vec3::Zero();
  Vec3 command = Vec3::Zero();
  JointVector joint_pos = JointVector::Zero();  // relative to q_default
  JointVector joint_vel = JointVector::Zero();
  JointVector last_action = JointVector::Zero();
  ClockSignal clock;
};

Observation build_observation(const ObservationInputs& in);

struct StepInfo {
  Vec3 command = Vec3::Zero();
  Vec3 base_position = Vec3::Zero();
  Vec3 base_velocity = Vec3::Zero();  // heading frame (vx, vy) and world vz
  double yaw_rate = 0.0;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  bool diverged = false;
  int episode_step = 0;
};

struct Transition {
  Observation observation = Observation::Zero();
  double reward = 0.0;
  RewardBreakdown breakdown;
  bool terminated = false;
  bool truncated = false;
  StepInfo info;
  StepContext context;  // what the rewards were evaluated on
};

/// One robot, one episode at a time.
class LocomotionEnv {
 public:
  explicit LocomotionEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }

  /// Reseeds, then resets.
  Observation reset(std::uint64_t seed);
  /// Resets from the current generator state.
  Observation reset();

  /// `action` is clamped so the joint targets stay within joint limits (up to rounding).
  Transition step(const JointVector& action);

  /// Pins the command (clamped) and stops scheduled resampling; nullopt resumes it.
  void set_command(const std::optional<Vec3>& command);
  const Vec3& command() const { return command_; }

  const Observation& observation() const { return obs_; }
  double episode_time() const { return steps_ * config_.control_dt; }
  int episode_steps() const { return steps_; }

  /// Direct access for test harnesses and replay tooling.
  BipedState& mutable_state() { return state_; }
  const BipedState& state() const { return state_; }
  BipedDynamics& dynamics() { return dynamics_; }

  void save(BinaryWriter& out) const;
  void load(BinaryReader& in);

 private:
  Observation make_observation() const;
  StepContext make_context(const JointVector& action, const StepOutput& sim);

  EnvConfig config_;
  BipedDynamics dynamics_;
  JointLimits limits_;
  JointVector q_default_;
  JointVector action_lower_, action_upper_;  // actions whose targets sit on the joint limits
  Rng rng_;

  BipedState state_;
  Vec3 command_ = Vec3::Zero();
  bool command_pinned_ = false;
  int steps_ = 0;
  int resample_every_ = 0;
  JointVector last_action_ = JointVector::Zero();
  JointVector qd_prev_ = JointVector::Zero();
  JointVector qd_prev2_ = JointVector::Zero();
  Observation obs_ = Observation::Zero();
};

}  // namespace biped
