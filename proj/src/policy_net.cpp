#include "biped/policy_net.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/QR>

#include "biped/errors.hpp"

namespace biped {

void MlpSpec::validate() const {
  if (input < 1 || output < 1) throw ConfigError("network: input and output widths must be >= 1");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("network: hidden widths must be >= 1");
  }
  if (!(init_log_std >= kLogStdMin && init_log_std <= kLogStdMax)) {
    throw ConfigError("network: init_log_std outside [-5, 1]");
  }
}

nlohmann::json to_json(const MlpSpec& s) {
  return {{"input", s.input}, {"hidden", s.hidden}, {"output", s.output}, {"init_log_std", s.init_log_std}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  try {
    s.input = j.value("input", s.input);
    s.hidden = j.value("hidden", s.hidden);
    s.output = j.value("output", s.output);
    s.init_log_std = j.value("init_log_std", s.init_log_std);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  s.validate();
  return s;
}

Eigen::RowVectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                     const Eigen::MatrixXd& actions) {
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  const double norm = -log_std.sum() - 0.5 * mean.rows() * std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXXd z = (actions - mean).array().colwise() * inv_std;
  return (-0.5 * z.square().colwise().sum() + norm).matrix();
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + 0.5 * log_std.size() * (1.0 + std::log(2.0 * std::numbers::pi));
}

ActorCritic::ActorCritic(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Eigen::Index offset = 0;
  policy_ = make_layers(spec_.output, offset);
  log_std_offset_ = offset;
  offset += spec_.output;
  value_ = make_layers(1, offset);
  params_ = Eigen::VectorXd::Zero(offset);
  params_.segment(log_std_offset_, spec_.output).setConstant(spec_.init_log_std);
}

std::vector<ActorCritic::Layer> ActorCritic::make_layers(int output, Eigen::Index& offset) const {
  std::vector<Layer> layers;
  int in = spec_.input;
  auto add = [&](int out) {
    Layer l{offset, offset + static_cast<Eigen::Index>(in) * out, in, out};
    offset = l.b + out;
    layers.push_back(l);
    in = out;
  };
  for (int h : spec_.hidden) add(h);
  add(output);
  return layers;
}

namespace {

// Orthogonal rows/columns scaled by gain.
Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int k = 0; k < small; ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  if (rows < cols) return gain * q.transpose();
  return gain * q;
}

}  // namespace

void ActorCritic::initialize(Rng& rng) {
  auto init = [&](const std::vector<Layer>& layers, double out_gain) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const Layer& l = layers[k];
      const double gain = k + 1 == layers.size() ? out_gain : std::sqrt(2.0);
      Eigen::Map<Eigen::MatrixXd>(params_.data() + l.w, l.out, l.in) = orthogonal(l.out, l.in, gain, rng);
      params_.segment(l.b, l.out).setZero();
    }
  };
  init(policy_, 0.01);
  init(value_, 1.0);
  params_.segment(log_std_offset_, spec_.output).setConstant(spec_.init_log_std);
}

void ActorCritic::clamp_log_std() {
  auto s = params_.segment(log_std_offset_, spec_.output);
  s = s.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

Eigen::MatrixXd ActorCritic::run(const std::vector<Layer>& layers, const Eigen::MatrixXd& x,
                                 std::vector<Eigen::MatrixXd>* keep) const {
  if (keep) {
    keep->resize(layers.size());
    (*keep)[0] = x;
  }
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    const Eigen::Map<const Eigen::MatrixXd> W(params_.data() + l.w, l.out, l.in);
    const Eigen::Map<const Eigen::VectorXd> b(params_.data() + l.b, l.out);
    Eigen::MatrixXd z = W * h;
    z.colwise() += b;
    if (k + 1 == layers.size()) return z;
    h = z.array().tanh().matrix();
    if (keep) (*keep)[k + 1] = h;
  }
  return h;
}

void ActorCritic::forward(const Eigen::MatrixXd& obs, Eigen::MatrixXd& mean, Eigen::RowVectorXd& value,
                          NetCache* cache) const {
  if (obs.rows() != spec_.input) throw InputError("network: observation width mismatch");
  mean = run(policy_, obs, cache ? &cache->policy : nullptr);
  value = run(value_, obs, cache ? &cache->value : nullptr);
}

Eigen::MatrixXd ActorCritic::mean(const Eigen::MatrixXd& obs) const {
  if (obs.rows() != spec_.input) throw InputError("network: observation width mismatch");
  return run(policy_, obs, nullptr);
}

void ActorCritic::back(const std::vector<Layer>& layers, const std::vector<Eigen::MatrixXd>& acts,
                       Eigen::MatrixXd d_out, Eigen::VectorXd& grad) const {
  for (std::size_t k = layers.size(); k-- > 0;) {
    const Layer& l = layers[k];
    const Eigen::MatrixXd& input = acts[k];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + l.w, l.out, l.in).noalias() += d_out * input.transpose();
    grad.segment(l.b, l.out) += d_out.rowwise().sum();
    if (k == 0) break;
    const Eigen::Map<const Eigen::MatrixXd> W(params_.data() + l.w, l.out, l.in);
    Eigen::MatrixXd d_in = W.transpose() * d_out;
    d_out = (d_in.array() * (1.0 - input.array().square())).matrix();
  }
}

void ActorCritic::backward(const NetCache& cache, const Eigen::MatrixXd& d_mean, const Eigen::RowVectorXd& d_value,
                           const Eigen::VectorXd& d_log_std, Eigen::VectorXd& grad) const {
  if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
  back(policy_, cache.policy, d_mean, grad);
  back(value_, cache.value, d_value, grad);
  grad.segment(log_std_offset_, spec_.output) += d_log_std;
}

}  // namespace biped
