#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "biped/env.hpp"
#include "biped/multibody.hpp"
#include "biped/thread_pool.hpp"

namespace biped {

struct EpisodeSummary {
  int env = 0;
  double return_sum = 0.0;
  int length = 0;
  bool terminated = false;  // false: truncated at the cap
};

/// Result of one batched step. Matrices are column-per-env.
struct BatchStep {
  Eigen::MatrixXd obs;           // post-reset observation where an episode ended
  Eigen::VectorXd reward;
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> truncated;
  std::vector<std::uint8_t> diverged;
  Eigen::MatrixXd terminal_obs;  // last observation of an ended episode (other columns unspecified)
  Eigen::MatrixXd stats;         // per-env scalars named by BatchEnv::stat_names()
  std::vector<EpisodeSummary> finished;
};

/// N independent environments stepped together with auto-reset.
class BatchEnv {
 public:
  virtual ~BatchEnv() = default;

  virtual int num_envs() const = 0;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual std::vector<std::string> stat_names() const = 0;

  /// Env i is seeded from (seed, i).
  virtual Eigen::MatrixXd reset(std::uint64_t seed) = 0;
  virtual void step(const Eigen::MatrixXd& actions, BatchStep& out) = 0;
  virtual const Eigen::MatrixXd& observations() const = 0;

  virtual void save(BinaryWriter& out) const = 0;
  virtual void load(BinaryReader& in) = 0;
};

/// Seed of env i in a batch created with `seed`.
std::uint64_t env_seed(std::uint64_t seed, int index);

/// Locomotion batch. Extra stats per env: r1..r17, then linear and yaw tracking error.
class LocomotionBatch final : public BatchEnv {
 public:
  LocomotionBatch(const EnvConfig& config, int num_envs, std::shared_ptr<ThreadPool> pool = nullptr);

  int num_envs() const override { return static_cast<int>(envs_.size()); }
  int obs_dim() const override { return kObsDim; }
  int act_dim() const override { return kActDim; }
  std::vector<std::string> stat_names() const override;

  Eigen::MatrixXd reset(std::uint64_t seed) override;
  /// Explicit per-env seeds instead of env_seed(seed, i).
  Eigen::MatrixXd reset_with(const std::vector<std::uint64_t>& seeds);
  void step(const Eigen::MatrixXd& actions, BatchStep& out) override;
  const Eigen::MatrixXd& observations() const override { return obs_; }

  LocomotionEnv& env(int i) { return *envs_[i]; }

  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;

 private:
  std::vector<std::unique_ptr<LocomotionEnv>> envs_;
  std::vector<double> returns_;
  std::shared_ptr<ThreadPool> pool_;
  Eigen::MatrixXd obs_;
};

struct PendulumConfig {
  double mass = 1.0;        // kg, point-like bob
  double length = 0.5;      // m, pivot to bob
  double max_torque = 10.0; // N m at |action| = 1
  double control_dt = 0.02;
  int substeps = 20;
  int max_episode_steps = 200;
  double fail_angle = 1.0;  // rad
  double reset_angle = 0.2; // rad, uniform
};

/// Inverted pendulum on the same multibody stack: one revolute joint, base fixed.
/// Reward cos(theta) per step; observation (sin, cos, rate / 5).
class PendulumBatch final : public BatchEnv {
 public:
  PendulumBatch(const PendulumConfig& config, int num_envs, std::shared_ptr<ThreadPool> pool = nullptr);
  ~PendulumBatch() override;

  int num_envs() const override { return num_envs_; }
  int obs_dim() const override { return 3; }
  int act_dim() const override { return 1; }
  std::vector<std::string> stat_names() const override { return {}; }

  Eigen::MatrixXd reset(std::uint64_t seed) override;
  void step(const Eigen::MatrixXd& actions, BatchStep& out) override;
  const Eigen::MatrixXd& observations() const override { return obs_; }

  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;

  double max_return() const { return config_.max_episode_steps; }

 private:
  struct Slot;
  void reset_slot(int i);
  void write_obs(int i);

  PendulumConfig config_;
  int num_envs_;
  Multibody body_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::shared_ptr<ThreadPool> pool_;
  Eigen::MatrixXd obs_;
};

}  // namespace biped
