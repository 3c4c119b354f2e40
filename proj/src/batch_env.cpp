#include "biped/batch_env.hpp"

#include <algorithm>
#include <cmath>

#include "biped/errors.hpp"
#include "biped/multibody.hpp"

namespace biped {

std::uint64_t env_seed(std::uint64_t seed, int index) {
  // splitmix64 finaliser over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

void prepare(BatchStep& out, int obs_dim, int n, int stats) {
  out.obs.resize(obs_dim, n);
  out.terminal_obs.resize(obs_dim, n);
  out.reward.resize(n);
  out.terminated.assign(n, 0);
  out.truncated.assign(n, 0);
  out.diverged.assign(n, 0);
  out.stats.resize(stats, n);
  out.finished.clear();
}

void check_actions(const Eigen::MatrixXd& actions, int act_dim, int n) {
  if (actions.rows() != act_dim || actions.cols() != n) {
    throw InputError("batch step: actions must be " + std::to_string(act_dim) + " x " + std::to_string(n));
  }
}

}  // namespace

LocomotionBatch::LocomotionBatch(const EnvConfig& config, int num_envs, std::shared_ptr<ThreadPool> pool)
    : returns_(num_envs, 0.0), pool_(pool ? std::move(pool) : std::make_shared<ThreadPool>(1)) {
  if (num_envs < 1) throw ConfigError("batch: num_envs must be >= 1");
  envs_.reserve(num_envs);
  for (int i = 0; i < num_envs; ++i) envs_.push_back(std::make_unique<LocomotionEnv>(config));
  reset(config.seed);
}

std::vector<std::string> LocomotionBatch::stat_names() const {
  std::vector<std::string> names;
  for (int t = 1; t <= kNumRewardTerms; ++t) names.push_back(reward_term_name(t));
  names.push_back("lin_vel_error");
  names.push_back("yaw_rate_error");
  return names;
}

Eigen::MatrixXd LocomotionBatch::reset(std::uint64_t seed) {
  std::vector<std::uint64_t> seeds(envs_.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = env_seed(seed, static_cast<int>(i));
  return reset_with(seeds);
}

Eigen::MatrixXd LocomotionBatch::reset_with(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != envs_.size()) throw InputError("batch reset: one seed per env");
  obs_.resize(kObsDim, num_envs());
  pool_->parallel_for(envs_.size(), [&](std::size_t i) {
    obs_.col(i) = envs_[i]->reset(seeds[i]);
    returns_[i] = 0.0;
  });
  return obs_;
}

void LocomotionBatch::step(const Eigen::MatrixXd& actions, BatchStep& out) {
  const int n = num_envs();
  check_actions(actions, kActDim, n);
  prepare(out, kObsDim, n, kNumRewardTerms + 2);
  std::vector<std::uint8_t> ended(n, 0);
  std::vector<EpisodeSummary> summaries(n);
  pool_->parallel_for(envs_.size(), [&](std::size_t i) {
    LocomotionEnv& env = *envs_[i];
    Transition tr;
    try {
      tr = env.step(actions.col(i));
    } catch (const std::exception&) {
      tr = Transition{};
      tr.breakdown.term(9) = -env.config().rewards.weight(9);
      tr.breakdown.total = sum_terms(tr.breakdown.r);
      tr.reward = tr.breakdown.total;
      tr.terminated = true;
      tr.info.diverged = true;
      tr.observation = env.observation();
    }
    out.reward[i] = tr.reward;
    out.terminated[i] = tr.terminated;
    out.truncated[i] = tr.truncated;
    out.diverged[i] = tr.info.diverged;
    for (int t = 0; t < kNumRewardTerms; ++t) out.stats(t, i) = tr.breakdown.r[t];
    const Vec3& c = tr.info.command;
    const Vec3& v = tr.info.base_velocity;
    out.stats(kNumRewardTerms, i) = std::hypot(c.x() - v.x(), c.y() - v.y());
    out.stats(kNumRewardTerms + 1, i) = std::abs(c.z() - tr.info.yaw_rate);
    returns_[i] += tr.reward;
    if (tr.terminated || tr.truncated) {
      out.terminal_obs.col(i) = tr.observation;
      summaries[i] = {static_cast<int>(i), returns_[i], env.episode_steps(), tr.terminated};
      returns_[i] = 0.0;
      ended[i] = 1;
      obs_.col(i) = env.reset();
    } else {
      obs_.col(i) = tr.observation;
    }
  });
  out.obs = obs_;
  for (int i = 0; i < n; ++i) {
    if (ended[i]) out.finished.push_back(summaries[i]);
  }
}

void LocomotionBatch::save(BinaryWriter& out) const {
  out.put<std::int64_t>(num_envs());
  for (int i = 0; i < num_envs(); ++i) {
    envs_[i]->save(out);
    out.put<double>(returns_[i]);
  }
}

void LocomotionBatch::load(BinaryReader& in) {
  if (in.get<std::int64_t>() != num_envs()) throw FormatError("batch: env count mismatch");
  for (int i = 0; i < num_envs(); ++i) {
    envs_[i]->load(in);
    returns_[i] = in.get<double>();
    obs_.col(i) = envs_[i]->observation();
  }
}

namespace {

Multibody pendulum_body(const PendulumConfig& c) {
  LinkSpec link;
  link.name = "pole";
  link.axis = Vec3::UnitY();
  link.mass = c.mass;
  link.com = Vec3(0.0, 0.0, c.length);
  link.inertia_com = Mat3::Identity() * 1e-4;
  return Multibody(false, 1.0, Vec3::Zero(), Mat3::Identity(), {link});
}

}  // namespace

struct PendulumBatch::Slot {
  explicit Slot(const Multibody& mb) : ws(mb) {}
  MultibodyWorkspace ws;
  MultibodyState state;
  Rng rng;
  int steps = 0;
  double return_sum = 0.0;
};


PendulumBatch::PendulumBatch(const PendulumConfig& config, int num_envs, std::shared_ptr<ThreadPool> pool)
    : config_(config), num_envs_(num_envs), body_(pendulum_body(config)), pool_(pool ? std::move(pool) : std::make_shared<ThreadPool>(1)) {
  if (num_envs < 1) throw ConfigError("batch: num_envs must be >= 1");
  if (!(config_.control_dt > 0.0) || config_.substeps < 1 || config_.max_episode_steps < 1) {
    throw ConfigError("pendulum: bad timing");
  }
  for (int i = 0; i < num_envs; ++i) slots_.push_back(std::make_unique<Slot>(body_));
  reset(0);
}

PendulumBatch::~PendulumBatch() = default;

void PendulumBatch::write_obs(int i) {
  const Slot& s = *slots_[i];
  obs_(0, i) = std::sin(s.state.q[0]);
  obs_(1, i) = std::cos(s.state.q[0]);
  obs_(2, i) = s.state.qd[0] / 5.0;
}

void PendulumBatch::reset_slot(int i) {
  Slot& s = *slots_[i];
  s.state = MultibodyState{};
  s.state.q = Eigen::VectorXd::Constant(1, uniform(s.rng, -config_.reset_angle, config_.reset_angle));
  s.state.qd = Eigen::VectorXd::Zero(1);
  s.steps = 0;
  s.return_sum = 0.0;
  write_obs(i);
}

Eigen::MatrixXd PendulumBatch::reset(std::uint64_t seed) {
  obs_.resize(3, num_envs_);
  for (int i = 0; i < num_envs_; ++i) {
    slots_[i]->rng = make_rng(env_seed(seed, i));
    reset_slot(i);
  }
  return obs_;
}

void PendulumBatch::step(const Eigen::MatrixXd& actions, BatchStep& out) {
  check_actions(actions, 1, num_envs_);
  prepare(out, 3, num_envs_, 0);
  const Multibody& mb = body_;
  const Vec3 gravity(0.0, 0.0, -9.81);
  const double dt = config_.control_dt / config_.substeps;
  const JointLockMask free;
  std::vector<std::uint8_t> ended(num_envs_, 0);
  std::vector<EpisodeSummary> summaries(num_envs_);
  pool_->parallel_for(num_envs_, [&](std::size_t i) {
    Slot& s = *slots_[i];
    const double a = actions(0, i);
    const Eigen::VectorXd tau =
        Eigen::VectorXd::Constant(1, config_.max_torque * (std::isfinite(a) ? std::clamp(a, -1.0, 1.0) : 0.0));
    for (int k = 0; k < config_.substeps; ++k) {
      update_kinematics(mb, s.state, s.ws);
      articulated_body_dynamics(mb, s.state, tau, gravity, free, s.ws);
      integrate(mb, s.state, s.ws, free, dt);
    }
    ++s.steps;
    const double theta = s.state.q[0];
    out.reward[i] = std::cos(theta);
    s.return_sum += out.reward[i];
    out.terminated[i] = !(std::abs(theta) <= config_.fail_angle);
    out.truncated[i] = !out.terminated[i] && s.steps >= config_.max_episode_steps;
    write_obs(static_cast<int>(i));
    if (out.terminated[i] || out.truncated[i]) {
      out.terminal_obs.col(i) = obs_.col(i);
      summaries[i] = {static_cast<int>(i), s.return_sum, s.steps, out.terminated[i] != 0};
      ended[i] = 1;
      reset_slot(static_cast<int>(i));
    }
  });
  out.obs = obs_;
  for (int i = 0; i < num_envs_; ++i) {
    if (ended[i]) out.finished.push_back(summaries[i]);
  }
}

void PendulumBatch::save(BinaryWriter& out) const {
  out.put<std::int64_t>(num_envs_);
  for (const auto& s : slots_) {
    out.put_string(rng_state(s->rng));
    out.put<double>(s->state.q[0]);
    out.put<double>(s->state.qd[0]);
    out.put<std::int64_t>(s->steps);
    out.put<double>(s->return_sum);
  }
}

void PendulumBatch::load(BinaryReader& in) {
  if (in.get<std::int64_t>() != num_envs_) throw FormatError("batch: env count mismatch");
  for (int i = 0; i < num_envs_; ++i) {
    Slot& s = *slots_[i];
    set_rng_state(s.rng, in.get_string());
    s.state.q[0] = in.get<double>();
    s.state.qd[0] = in.get<double>();
    s.steps = static_cast<int>(in.get<std::int64_t>());
    s.return_sum = in.get<double>();
    write_obs(i);
  }
}

}  // namespace biped
