#include "biped/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <boost/crc.hpp>

#include "biped/config.hpp"
#include "biped/errors.hpp"

namespace biped {

namespace {

constexpr char kMagic[8] = {'B', 'I', 'P', 'E', 'D', 'C', 'K', 'P'};

void require(bool ok, const char* msg) {
  if (!ok) throw ConfigError(std::string("train config: ") + msg);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json hashed_part(const PpoConfig& c) {
  // settings that do not change the training trajectory are left out so a run can be
  // extended or moved to another machine
  nlohmann::json j = to_json(c);
  j.erase("total_steps");
  j.erase("checkpoint_every");
  j.erase("threads");
  return j;
}

}  // namespace

void PpoConfig::validate() const {
  require(total_steps >= 0, "total_steps must be >= 0");
  require(num_envs >= 1 && rollout_length >= 1, "num_envs and rollout_length must be >= 1");
  require(minibatches >= 1 && epochs >= 1, "minibatches and epochs must be >= 1");
  require(steps_per_update() % minibatches == 0, "num_envs * rollout_length must be divisible by minibatches");
  require(gamma > 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0, "gamma in (0,1], lambda in [0,1]");
  require(clip > 0.0, "clip must be > 0");
  require(learning_rate >= 0.0, "learning_rate must be >= 0");
  require(entropy_coef >= 0.0 && value_coef >= 0.0, "loss coefficients must be >= 0");
  require(max_grad_norm > 0.0, "max_grad_norm must be > 0");
  require(checkpoint_every >= 0 && threads >= 0, "checkpoint_every and threads must be >= 0");
  network.validate();
}

int PpoConfig::num_updates() const {
  return static_cast<int>((total_steps + steps_per_update() - 1) / steps_per_update());
}

nlohmann::json to_json(const PpoConfig& c) {
  return {{"schema", kTrainSchema},
          {"total_steps", c.total_steps},
          {"num_envs", c.num_envs},
          {"rollout_length", c.rollout_length},
          {"minibatches", c.minibatches},
          {"epochs", c.epochs},
          {"gamma", c.gamma},
          {"lambda", c.lambda},
          {"clip", c.clip},
          {"learning_rate", c.learning_rate},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"normalize_observations", c.normalize_observations},
          {"normalize_rewards", c.normalize_rewards},
          {"checkpoint_every", c.checkpoint_every},
          {"threads", c.threads},
          {"seed", c.seed},
          {"network", to_json(c.network)}};
}

PpoConfig ppo_config_from_json(const nlohmann::json& j) {
  require_schema(j, kTrainSchema, "train config");
  // "env" and "output_dir" belong to the CLI's train file
  require_known_keys(j,
                     {"schema", "total_steps", "num_envs", "rollout_length", "minibatches", "epochs", "gamma", "lambda",
                      "clip", "learning_rate", "entropy_coef", "value_coef", "max_grad_norm", "normalize_observations",
                      "normalize_rewards", "checkpoint_every", "threads", "seed", "network", "env", "output_dir"},
                     "train config");
  PpoConfig c;
  try {
    c.total_steps = j.value("total_steps", c.total_steps);
    c.num_envs = j.value("num_envs", c.num_envs);
    c.rollout_length = j.value("rollout_length", c.rollout_length);
    c.minibatches = j.value("minibatches", c.minibatches);
    c.epochs = j.value("epochs", c.epochs);
    c.gamma = j.value("gamma", c.gamma);
    c.lambda = j.value("lambda", c.lambda);
    c.clip = j.value("clip", c.clip);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.normalize_observations = j.value("normalize_observations", c.normalize_observations);
    c.normalize_rewards = j.value("normalize_rewards", c.normalize_rewards);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    if (j.contains("network")) c.network = mlp_spec_from_json(j.at("network"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

RunningMeanStd::RunningMeanStd(Eigen::Index dim)
    : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)), count(0.0) {}

void RunningMeanStd::update(const Eigen::MatrixXd& batch) {
  const double n = static_cast<double>(batch.cols());
  if (n == 0.0) return;
  const Eigen::VectorXd bm = batch.rowwise().mean();
  const Eigen::VectorXd bv = (batch.colwise() - bm).array().square().rowwise().mean();
  if (count == 0.0) {
    mean = bm;
    var = bv;
    count = n;
    return;
  }
  const double total = count + n;
  const Eigen::VectorXd delta = bm - mean;
  mean += delta * (n / total);
  var = (var * count + bv * n + delta.array().square().matrix() * (count * n / total)) / total;
  count = total;
}

Eigen::MatrixXd RunningMeanStd::normalize(const Eigen::MatrixXd& x) const {
  const Eigen::ArrayXd inv = (var.array() + 1e-8).rsqrt();
  return ((x.colwise() - mean).array().colwise() * inv).cwiseMax(-10.0).cwiseMin(10.0).matrix();
}

void RunningMeanStd::save(BinaryWriter& out) const {
  out.put_matrix(mean);
  out.put_matrix(var);
  out.put<double>(count);
}

void RunningMeanStd::load(BinaryReader& in) {
  mean = in.get_matrix();
  var = in.get_matrix();
  count = in.get<double>();
  if (mean.cols() != 1 || var.cols() != 1 || mean.rows() != var.rows()) throw FormatError("bad normalizer shape");
}

GaeResult compute_gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                      const Eigen::RowVectorXd& last_values, double gamma, double lambda) {
  const Eigen::Index T = rewards.rows(), N = rewards.cols();
  if (values.rows() != T || values.cols() != N || dones.rows() != T || dones.cols() != N || last_values.size() != N) {
    throw InputError("compute_gae: shape mismatch");
  }
  GaeResult out;
  out.advantages.resize(T, N);
  Eigen::RowVectorXd next_adv = Eigen::RowVectorXd::Zero(N);
  Eigen::RowVectorXd next_value = last_values;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    for (Eigen::Index i = 0; i < N; ++i) {
      const double live = 1.0 - dones(t, i);
      const double delta = rewards(t, i) + gamma * next_value[i] * live - values(t, i);
      next_adv[i] = delta + gamma * lambda * live * next_adv[i];
      out.advantages(t, i) = next_adv[i];
    }
    next_value = values.row(t);
  }
  out.returns = out.advantages + values;
  return out;
}

LossStats ppo_loss(const ActorCritic& net, const PpoBatch& b, const LossCoefficients& coef, Eigen::VectorXd* grad) {
  const Eigen::Index B = b.obs.cols();
  if (B == 0) throw InputError("ppo_loss: empty batch");
  NetCache cache;
  Eigen::MatrixXd mean;
  Eigen::RowVectorXd value;
  net.forward(b.obs, mean, value, grad ? &cache : nullptr);

  const Eigen::VectorXd log_std = net.log_std();
  const Eigen::RowVectorXd logp = gaussian_log_prob(mean, log_std, b.actions);
  const Eigen::ArrayXd log_ratio = (logp - b.old_log_prob).transpose().array();
  const Eigen::ArrayXd ratio = log_ratio.exp();
  const Eigen::ArrayXd adv = b.advantages.transpose().array();
  const Eigen::ArrayXd clipped = ratio.cwiseMax(1.0 - coef.clip).cwiseMin(1.0 + coef.clip);
  const Eigen::ArrayXd surr = (ratio * adv).cwiseMin(clipped * adv);
  const Eigen::ArrayXd verr = (value - b.returns).transpose().array();

  LossStats s;
  s.policy = -surr.mean();
  s.value = verr.square().mean();
  s.entropy = gaussian_entropy(log_std);
  s.total = s.policy + coef.value_coef * s.value - coef.entropy_coef * s.entropy;
  s.approx_kl = ((ratio - 1.0) - log_ratio).mean();
  s.clip_fraction = ((ratio - 1.0).abs() > coef.clip).cast<double>().mean();

  if (grad) {
    // the min picks the unclipped branch (or ties with it) exactly when these hold
    Eigen::ArrayXd g_logp(B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const bool active = adv[i] >= 0.0 ? ratio[i] <= 1.0 + coef.clip : ratio[i] >= 1.0 - coef.clip;
      g_logp[i] = active ? -ratio[i] * adv[i] / static_cast<double>(B) : 0.0;
    }
    const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
    const Eigen::ArrayXXd diff = (b.actions - mean).array();
    const Eigen::MatrixXd d_mean = ((diff.colwise() * inv_var).rowwise() * g_logp.transpose()).matrix();
    const Eigen::ArrayXXd z2 = diff.square().colwise() * inv_var;
    const Eigen::VectorXd d_log_std =
        ((z2 - 1.0).rowwise() * g_logp.transpose()).rowwise().sum().matrix() -
        Eigen::VectorXd::Constant(log_std.size(), coef.entropy_coef);
    const Eigen::RowVectorXd d_value = (coef.value_coef * 2.0 / static_cast<double>(B)) * verr.transpose().matrix();
    grad->setZero(net.num_params());
    net.backward(cache, d_mean, d_value, d_log_std, *grad);
  }
  return s;
}

void Adam::reset(Eigen::Index n) {
  m = Eigen::VectorXd::Zero(n);
  v = Eigen::VectorXd::Zero(n);
  t = 0;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

std::vector<std::string> metrics_header(const std::vector<std::string>& stat_names) {
  std::vector<std::string> h = {"update",      "env_steps",     "episodes",  "mean_return",
                                "mean_episode_length", "mean_reward", "diverged",  "policy_loss",
                                "value_loss",  "entropy",       "approx_kl", "clip_fraction",
                                "grad_norm",   "mean_log_std"};
  h.insert(h.end(), stat_names.begin(), stat_names.end());
  return h;
}

std::string metrics_row(const UpdateStats& s) {
  std::string row = std::to_string(s.update) + "," + std::to_string(s.env_steps) + "," + std::to_string(s.episodes);
  for (double v : {s.mean_return, s.mean_episode_length, s.mean_reward}) row += "," + fmt(v);
  row += "," + std::to_string(s.diverged);
  for (double v : {s.loss.policy, s.loss.value, s.loss.entropy, s.loss.approx_kl, s.loss.clip_fraction, s.grad_norm,
                   s.mean_log_std}) {
    row += "," + fmt(v);
  }
  for (double v : s.env_stats) row += "," + fmt(v);
  return row;
}

Eigen::MatrixXd PolicySnapshot::act(const Eigen::MatrixXd& obs) const {
  if (obs.rows() != net->spec().input) {
    throw InputError("policy: observation length " + std::to_string(obs.rows()) + ", expected " +
                     std::to_string(net->spec().input));
  }
  // one column at a time: a matrix product over the batch would sum in a different
  // order than a single-observation call and break bitwise agreement between the two
  const Eigen::MatrixXd x = normalize_observations ? obs_stats.normalize(obs) : obs;
  Eigen::MatrixXd out(net->spec().output, x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.col(i) = net->mean(x.col(i));
  return out;
}

PpoTrainer::PpoTrainer(PpoConfig config, std::unique_ptr<BatchEnv> env, nlohmann::json env_config)
    : config_(std::move(config)), env_(std::move(env)), env_config_(std::move(env_config)) {
  config_.validate();
  if (!env_) throw ConfigError("trainer: no environment");
  if (env_->num_envs() != config_.num_envs) throw ConfigError("trainer: env batch size differs from num_envs");
  if (env_->obs_dim() != config_.network.input || env_->act_dim() != config_.network.output) {
    throw ConfigError("trainer: network shape does not match the environment");
  }
  hash_ = biped::config_hash({{"train", hashed_part(config_)}, {"env", env_config_}});
  net_ = std::make_shared<ActorCritic>(config_.network);
  rng_ = make_rng(config_.seed, 1);
  net_->initialize(rng_);
  adam_.reset(net_->num_params());
  obs_stats_ = RunningMeanStd(env_->obs_dim());
  ret_stats_ = RunningMeanStd(1);
  running_returns_ = Eigen::VectorXd::Zero(config_.num_envs);
  env_->reset(config_.seed);
}

Eigen::MatrixXd PpoTrainer::normalize(const Eigen::MatrixXd& obs) const {
  return config_.normalize_observations ? obs_stats_.normalize(obs) : obs;
}

void PpoTrainer::collect_rollout(RolloutBuffer& buf, UpdateStats& stats) {
  const int T = config_.rollout_length, N = config_.num_envs;
  const int A = env_->act_dim();
  buf.T = T;
  buf.N = N;
  buf.obs.resize(env_->obs_dim(), static_cast<Eigen::Index>(T) * N);
  buf.actions.resize(A, static_cast<Eigen::Index>(T) * N);
  buf.log_probs.resize(static_cast<Eigen::Index>(T) * N);
  buf.values.resize(T, N);
  buf.rewards.resize(T, N);
  buf.dones.resize(T, N);

  const auto names = env_->stat_names();
  stats.env_stats.assign(names.size(), 0.0);
  double reward_sum = 0.0, return_sum = 0.0, length_sum = 0.0;
  int episodes = 0, diverged = 0;

  const Eigen::VectorXd log_std = net_->log_std();
  const Eigen::ArrayXd std_dev = log_std.array().exp();
  Eigen::MatrixXd mean, actions(A, N);
  Eigen::RowVectorXd value;
  BatchStep out;
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd& raw = env_->observations();
    if (config_.normalize_observations) obs_stats_.update(raw);
    const Eigen::MatrixXd obs = normalize(raw);
    net_->forward(obs, mean, value);
    for (int i = 0; i < N; ++i) {
      for (int a = 0; a < A; ++a) actions(a, i) = mean(a, i) + std_dev[a] * standard_normal(rng_);
    }
    buf.obs.middleCols(static_cast<Eigen::Index>(t) * N, N) = obs;
    buf.actions.middleCols(static_cast<Eigen::Index>(t) * N, N) = actions;
    buf.log_probs.segment(static_cast<Eigen::Index>(t) * N, N) = gaussian_log_prob(mean, log_std, actions);
    buf.values.row(t) = value;

    env_->step(actions, out);

    Eigen::VectorXd reward = out.reward;
    reward_sum += reward.sum();
    for (std::size_t k = 0; k < names.size(); ++k) stats.env_stats[k] += out.stats.row(k).sum();
    if (config_.normalize_rewards) {
      running_returns_ = running_returns_ * config_.gamma + reward;
      ret_stats_.update(running_returns_.transpose());
      reward /= std::sqrt(ret_stats_.var[0] + 1e-8);
    }
    // a time-limit cut is not a real ending: fold the value of the state it cut off into the reward
    std::vector<Eigen::Index> cut;
    for (int i = 0; i < N; ++i) {
      if (out.truncated[i] && !out.terminated[i]) cut.push_back(i);
    }
    if (!cut.empty()) {
      Eigen::MatrixXd term(env_->obs_dim(), static_cast<Eigen::Index>(cut.size()));
      for (std::size_t k = 0; k < cut.size(); ++k) term.col(k) = out.terminal_obs.col(cut[k]);
      Eigen::MatrixXd unused;
      Eigen::RowVectorXd v_term;
      net_->forward(normalize(term), unused, v_term);
      for (std::size_t k = 0; k < cut.size(); ++k) reward[cut[k]] += config_.gamma * v_term[k];
    }
    for (int i = 0; i < N; ++i) {
      const bool done = out.terminated[i] || out.truncated[i];
      buf.dones(t, i) = done ? 1.0 : 0.0;
      if (done) running_returns_[i] = 0.0;
      diverged += out.diverged[i];
    }
    buf.rewards.row(t) = reward.transpose();
    for (const auto& ep : out.finished) {
      return_sum += ep.return_sum;
      length_sum += ep.length;
      ++episodes;
    }
  }
  Eigen::MatrixXd unused;
  net_->forward(normalize(env_->observations()), unused, buf.last_values);

  const double steps = static_cast<double>(T) * N;
  env_steps_ += static_cast<std::int64_t>(T) * N;
  stats.env_steps = env_steps_;
  stats.episodes = episodes;
  stats.mean_return = episodes ? return_sum / episodes : std::numeric_limits<double>::quiet_NaN();
  stats.mean_episode_length = episodes ? length_sum / episodes : std::numeric_limits<double>::quiet_NaN();
  stats.mean_reward = reward_sum / steps;
  stats.diverged = diverged;
  for (double& v : stats.env_stats) v /= steps;
}

void PpoTrainer::update(const RolloutBuffer& buf, UpdateStats& stats) {
  const Eigen::VectorXd saved_params = net_->params();
  const Adam saved_adam = adam_;

  const GaeResult gae = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_values, config_.gamma, config_.lambda);
  // T x N column-major -> sample order t * N + i
  const Eigen::MatrixXd adv_t = gae.advantages.transpose();
  const Eigen::MatrixXd ret_t = gae.returns.transpose();
  Eigen::RowVectorXd adv = Eigen::Map<const Eigen::RowVectorXd>(adv_t.data(), adv_t.size());
  const Eigen::RowVectorXd ret = Eigen::Map<const Eigen::RowVectorXd>(ret_t.data(), ret_t.size());
  const double adv_mean = adv.mean();
  const double adv_std = std::sqrt((adv.array() - adv_mean).square().mean());
  adv = (adv.array() - adv_mean) / (adv_std + 1e-8);

  const Eigen::Index total = adv.size();
  const Eigen::Index mb = total / config_.minibatches;
  std::vector<Eigen::Index> order(total);
  const LossCoefficients coef{config_.clip, config_.value_coef, config_.entropy_coef};
  LossStats acc;
  double grad_norm_sum = 0.0;
  int count = 0;
  Eigen::VectorXd grad;
  PpoBatch batch;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    for (Eigen::Index k = 0; k < total; ++k) order[k] = k;
    for (Eigen::Index k = total - 1; k > 0; --k) {
      const auto j = static_cast<Eigen::Index>(rng_() % static_cast<std::uint64_t>(k + 1));
      std::swap(order[k], order[j]);
    }
    for (int m = 0; m < config_.minibatches; ++m) {
      batch.obs.resize(buf.obs.rows(), mb);
      batch.actions.resize(buf.actions.rows(), mb);
      batch.old_log_prob.resize(mb);
      batch.advantages.resize(mb);
      batch.returns.resize(mb);
      for (Eigen::Index c = 0; c < mb; ++c) {
        const Eigen::Index src = order[m * mb + c];
        batch.obs.col(c) = buf.obs.col(src);
        batch.actions.col(c) = buf.actions.col(src);
        batch.old_log_prob[c] = buf.log_probs[src];
        batch.advantages[c] = adv[src];
        batch.returns[c] = ret[src];
      }
      const LossStats s = ppo_loss(*net_, batch, coef, &grad);
      if (!std::isfinite(s.total) || !grad.allFinite()) {
        net_->params() = saved_params;
        adam_ = saved_adam;
        throw TrainingError("non-finite loss in update " + std::to_string(updates_ + 1) +
                            "; parameters restored");
      }
      const double norm = grad.norm();
      if (norm > config_.max_grad_norm) grad *= config_.max_grad_norm / norm;
      adam_.step(net_->params(), grad, config_.learning_rate);
      net_->clamp_log_std();
      acc.total += s.total;
      acc.policy += s.policy;
      acc.value += s.value;
      acc.entropy += s.entropy;
      acc.approx_kl += s.approx_kl;
      acc.clip_fraction += s.clip_fraction;
      grad_norm_sum += norm;
      ++count;
    }
  }
  stats.loss.total = acc.total / count;
  stats.loss.policy = acc.policy / count;
  stats.loss.value = acc.value / count;
  stats.loss.entropy = acc.entropy / count;
  stats.loss.approx_kl = acc.approx_kl / count;
  stats.loss.clip_fraction = acc.clip_fraction / count;
  stats.grad_norm = grad_norm_sum / count;
  stats.mean_log_std = net_->log_std().mean();
  ++updates_;
  stats.update = updates_;
}

UpdateStats PpoTrainer::iterate() {
  RolloutBuffer buf;
  UpdateStats stats;
  collect_rollout(buf, stats);
  update(buf, stats);
  return stats;
}

void PpoTrainer::train(const std::filesystem::path& out_dir, const std::function<void(const UpdateStats&)>& on_update) {
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "metrics.csv";
    const bool fresh = updates_ == 0 || !std::filesystem::exists(path);
    metrics.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write " + path.string());
    if (fresh) {
      const auto header = metrics_header(env_->stat_names());
      for (std::size_t k = 0; k < header.size(); ++k) metrics << (k ? "," : "") << header[k];
      metrics << '\n';
    }
  }
  const int target = config_.num_updates();
  while (updates_ < target) {
    const UpdateStats s = iterate();
    if (metrics.is_open()) {
      metrics << metrics_row(s) << '\n';
      metrics.flush();
      if (!metrics) throw std::runtime_error("writing metrics failed");
    }
    if (on_update) on_update(s);
    if (!out_dir.empty() && config_.checkpoint_every > 0 && updates_ % config_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06d.bin", updates_);
      save_checkpoint(out_dir / name);
    }
  }
  if (!out_dir.empty()) save_checkpoint(out_dir / "final.bin");
}

std::string PpoTrainer::serialize_state() const {
  BinaryWriter w;
  w.put_string(to_json(config_).dump());
  w.put_string(env_config_.dump());
  w.put_matrix(net_->params());
  w.put<std::uint8_t>(config_.normalize_observations ? 1 : 0);
  obs_stats_.save(w);
  // trainer-only state below
  w.put_matrix(adam_.m);
  w.put_matrix(adam_.v);
  w.put<std::int64_t>(adam_.t);
  w.put_string(rng_state(rng_));
  ret_stats_.save(w);
  w.put_matrix(running_returns_);
  w.put<std::int64_t>(env_steps_);
  w.put<std::int64_t>(updates_);
  env_->save(w);
  return w.data();
}

void PpoTrainer::deserialize_state(std::string_view payload) {
  BinaryReader r(payload);
  r.get_string();
  r.get_string();
  r.get_into(net_->params());
  r.get<std::uint8_t>();
  obs_stats_.load(r);
  r.get_into(adam_.m);
  r.get_into(adam_.v);
  adam_.t = r.get<std::int64_t>();
  set_rng_state(rng_, r.get_string());
  ret_stats_.load(r);
  r.get_into(running_returns_);
  env_steps_ = r.get<std::int64_t>();
  updates_ = static_cast<int>(r.get<std::int64_t>());
  env_->load(r);
  if (!r.done()) throw FormatError("trailing bytes in checkpoint payload");
}

void PpoTrainer::save_checkpoint(const std::filesystem::path& path) const {
  write_checkpoint_file(path, hash_, serialize_state());
}

void PpoTrainer::load_checkpoint(const std::filesystem::path& path, bool force) {
  CheckpointHeader header;
  const std::string payload = read_checkpoint_file(path, header);
  if (header.config_hash != hash_ && !force) {
    throw FormatError("checkpoint " + path.string() + " was written with a different configuration (use --force)");
  }
  // parse into a scratch copy first so a bad payload leaves this trainer untouched
  const Eigen::VectorXd params = net_->params();
  const Adam adam = adam_;
  try {
    deserialize_state(payload);
  } catch (...) {
    net_->params() = params;
    adam_ = adam;
    throw;
  }
}

PolicySnapshot PpoTrainer::snapshot() const {
  PolicySnapshot p;
  p.net = std::make_shared<ActorCritic>(*net_);
  p.obs_stats = obs_stats_;
  p.normalize_observations = config_.normalize_observations;
  p.env_config = env_config_;
  return p;
}

void write_checkpoint_file(const std::filesystem::path& path, std::uint64_t config_hash, const std::string& payload) {
  BinaryWriter w;
  for (char c : kMagic) w.put<char>(c);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(config_hash);
  w.put_string(payload);
  boost::crc_32_type crc;
  crc.process_bytes(w.data().data(), w.data().size());
  w.put<std::uint32_t>(crc.checksum());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_file(const std::filesystem::path& path, CheckpointHeader& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof kMagic + 4 + 8 + 8 + 4 || data.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  boost::crc_32_type crc;
  crc.process_bytes(data.data(), data.size() - 4);
  BinaryReader tail(std::string_view(data).substr(data.size() - 4));
  header.checksum = tail.get<std::uint32_t>();
  if (crc.checksum() != header.checksum) throw FormatError("checkpoint " + path.string() + ": checksum mismatch");
  BinaryReader r(std::string_view(data).substr(sizeof kMagic, data.size() - sizeof kMagic - 4));
  header.version = r.get<std::uint32_t>();
  if (header.version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported version " + std::to_string(header.version));
  }
  header.config_hash = r.get<std::uint64_t>();
  std::string payload = r.get_string();
  if (!r.done()) throw FormatError("checkpoint " + path.string() + ": trailing bytes");
  return payload;
}

PolicySnapshot load_policy(const std::filesystem::path& path) {
  CheckpointHeader header;
  const std::string payload = read_checkpoint_file(path, header);
  BinaryReader r(payload);
  PolicySnapshot p;
  nlohmann::json train;
  try {
    train = nlohmann::json::parse(r.get_string());
    p.env_config = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  p.net = std::make_shared<ActorCritic>(ppo_config_from_json(train).network);
  r.get_into(p.net->params());
  p.normalize_observations = r.get<std::uint8_t>() != 0;
  p.obs_stats.load(r);
  p.checkpoint_id = header.checksum;
  return p;
}

}  // namespace biped
