#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "biped/env.hpp"
#include "biped/ppo.hpp"
#include "biped/trajectory.hpp"

namespace biped {

/// A foot counts as loaded when its normal force exceeds this, N.
inline constexpr double kStanceForceThreshold = 50.0;

/// Fraction of (step, foot) pairs where measured loading matches the scheduled stance.
double gait_adherence(const std::vector<StepContext>& steps);

struct EvalCell {
  Vec3 command = Vec3::Zero();
  int episodes = 0;
  double lin_vel_error = 0.0;   // mean |(vx, vy) command - measured|, m/s
  double yaw_rate_error = 0.0;  // mean |command - measured|, rad/s
  double mean_episode_length = 0.0;
  double fall_rate = 0.0;
  double gait_adherence = 0.0;
  std::array<double, kNumRewardTerms> mean_terms{};
  double mean_total = 0.0;
};

struct EvalReport {
  std::vector<EvalCell> cells;
};

struct EvalOptions {
  int episodes_per_cell = 1;
  std::uint64_t seed = 0;
  std::filesystem::path trajectory_dir;  // empty: no logs
};

/// Deterministic rollouts (policy mean) with the command pinned per cell. Cells run in order;
/// episode e of every cell resets with seed env_seed(options.seed, e).
EvalReport evaluate(const PolicySnapshot& policy, const EnvConfig& env, const std::vector<Vec3>& grid,
                    const EvalOptions& options);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Runs one episode with the policy and writes its log. Returns the number of steps.
int record_episode(const PolicySnapshot& policy, LocomotionEnv& env, std::uint64_t seed,
                   const std::filesystem::path& path);

}  // namespace biped
