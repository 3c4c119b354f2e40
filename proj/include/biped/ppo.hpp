#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "biped/batch_env.hpp"
#include "biped/policy_net.hpp"
#include "biped/rng.hpp"
#include "biped/serialize.hpp"

namespace biped {

inline constexpr char kTrainSchema[] = "biped-train/1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct PpoConfig {
  std::int64_t total_steps = 5'000'000;
  int num_envs = 256;
  int rollout_length = 32;
  int minibatches = 32;
  int epochs = 4;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double learning_rate = 3e-4;
  double entropy_coef = 0.001;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  bool normalize_observations = true;
  bool normalize_rewards = true;
  int checkpoint_every = 50;  // updates; 0 keeps only the final checkpoint
  int threads = 0;            // 0: all hardware threads
  std::uint64_t seed = 0;
  MlpSpec network;

  void validate() const;
  std::int64_t steps_per_update() const { return static_cast<std::int64_t>(num_envs) * rollout_length; }
  int num_updates() const;
};

nlohmann::json to_json(const PpoConfig& c);
PpoConfig ppo_config_from_json(const nlohmann::json& j);

/// Mean and variance merged batch by batch (parallel Welford).
struct RunningMeanStd {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;

  RunningMeanStd() = default;
  explicit RunningMeanStd(Eigen::Index dim);

  /// Columns of `batch` are samples.
  void update(const Eigen::MatrixXd& batch);
  /// (x - mean) / sqrt(var + 1e-8), clipped to +-10.
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;

  void save(BinaryWriter& out) const;
  void load(BinaryReader& in);
};

struct GaeResult {
  Eigen::MatrixXd advantages;  // T x N
  Eigen::MatrixXd returns;     // advantages + values
};

/// Reverse-scan generalized advantage estimation. Row t of each T x N input is step t;
/// dones(t, i) = 1 cuts the bootstrap after step t. `last_values` bootstraps step T.
GaeResult compute_gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                      const Eigen::RowVectorXd& last_values, double gamma, double lambda);

/// One minibatch; columns are samples.
struct PpoBatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::RowVectorXd old_log_prob;
  Eigen::RowVectorXd advantages;
  Eigen::RowVectorXd returns;
};

struct LossCoefficients {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.001;
};

struct LossStats {
  double total = 0.0;
  double policy = 0.0;   // clipped surrogate, negated
  double value = 0.0;    // mean squared error
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// total = policy + value_coef * value - entropy_coef * entropy. Writes dtotal/dparams when grad is given.
LossStats ppo_loss(const ActorCritic& net, const PpoBatch& batch, const LossCoefficients& coef,
                   Eigen::VectorXd* grad);

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;

  void reset(Eigen::Index n);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
};

struct RolloutBuffer {
  int T = 0;
  int N = 0;
  Eigen::MatrixXd obs;         // normalized, obs_dim x (T*N), column t*N + i
  Eigen::MatrixXd actions;     // act_dim x (T*N)
  Eigen::RowVectorXd log_probs;
  Eigen::MatrixXd values;      // T x N
  Eigen::MatrixXd rewards;     // T x N, scaled, truncation bootstrap folded in
  Eigen::MatrixXd dones;       // T x N
  Eigen::RowVectorXd last_values;
};

/// Per-update numbers written to the metrics CSV.
struct UpdateStats {
  int update = 0;
  std::int64_t env_steps = 0;
  int episodes = 0;
  double mean_return = 0.0;          // over episodes finished in this update; NaN if none
  double mean_episode_length = 0.0;  // same
  double mean_reward = 0.0;          // raw per-step reward
  int diverged = 0;
  LossStats loss;
  double grad_norm = 0.0;            // pre-clip, averaged over minibatches
  double mean_log_std = 0.0;
  std::vector<double> env_stats;     // per-step means of BatchEnv::stat_names()
};

std::vector<std::string> metrics_header(const std::vector<std::string>& stat_names);
std::string metrics_row(const UpdateStats& s);

/// Observation normalizer and policy, as needed to act.
struct PolicySnapshot {
  std::shared_ptr<ActorCritic> net;
  RunningMeanStd obs_stats;
  bool normalize_observations = true;
  nlohmann::json env_config;
  std::uint64_t checkpoint_id = 0;

  /// Deterministic action (policy mean) for each observation column.
  Eigen::MatrixXd act(const Eigen::MatrixXd& obs) const;
};

class PpoTrainer {
 public:
  /// `env_config` is recorded in checkpoints and folded into the config hash.
  PpoTrainer(PpoConfig config, std::unique_ptr<BatchEnv> env, nlohmann::json env_config = nlohmann::json::object());

  const PpoConfig& config() const { return config_; }
  ActorCritic& net() { return *net_; }
  const ActorCritic& net() const { return *net_; }
  BatchEnv& env() { return *env_; }
  const Adam& optimizer() const { return adam_; }
  const RunningMeanStd& obs_stats() const { return obs_stats_; }
  std::int64_t env_steps() const { return env_steps_; }
  int updates_done() const { return updates_; }
  std::uint64_t config_hash() const { return hash_; }

  void collect_rollout(RolloutBuffer& buf, UpdateStats& stats);
  /// Throws TrainingError (parameters and optimizer restored) on a non-finite loss.
  void update(const RolloutBuffer& buf, UpdateStats& stats);
  /// collect_rollout + update.
  UpdateStats iterate();

  /// Runs until total_steps, appending a metrics row per update and checkpointing into
  /// `out_dir` when given. `on_update` sees every row.
  void train(const std::filesystem::path& out_dir,
             const std::function<void(const UpdateStats&)>& on_update = nullptr);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Refuses a config-hash mismatch unless `force`.
  void load_checkpoint(const std::filesystem::path& path, bool force = false);

  PolicySnapshot snapshot() const;

 private:
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& obs) const;
  std::string serialize_state() const;
  void deserialize_state(std::string_view payload);

  PpoConfig config_;
  std::unique_ptr<BatchEnv> env_;
  nlohmann::json env_config_;
  std::uint64_t hash_ = 0;
  std::shared_ptr<ActorCritic> net_;
  Adam adam_;
  Rng rng_;
  RunningMeanStd obs_stats_;
  RunningMeanStd ret_stats_;
  Eigen::VectorXd running_returns_;
  std::int64_t env_steps_ = 0;
  int updates_ = 0;
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint64_t config_hash = 0;
  std::uint32_t checksum = 0;  // CRC-32 of the file; doubles as the checkpoint id
};

/// Reads and verifies a checkpoint container; returns the payload. FormatError on a bad
/// magic, version or checksum.
std::string read_checkpoint_file(const std::filesystem::path& path, CheckpointHeader& header);
void write_checkpoint_file(const std::filesystem::path& path, std::uint64_t config_hash, const std::string& payload);

/// Policy part of a checkpoint, for evaluation and serving.
PolicySnapshot load_policy(const std::filesystem::path& path);

}  // namespace biped
