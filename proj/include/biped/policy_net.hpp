#pragma once

#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "biped/rng.hpp"

namespace biped {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;

/// Two tanh MLPs of the same shape: a policy mean head and a scalar value head, plus a
/// state-independent log standard deviation per action.
struct MlpSpec {
  int input = 45;
  std::vector<int> hidden{128, 128, 128, 128};
  int output = 12;
  double init_log_std = -0.6931471805599453;  // log 0.5

  void validate() const;
};

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

/// Per-sample log density of a diagonal Gaussian; columns are samples.
Eigen::RowVectorXd gaussian_log_prob(const Eigen::MatrixXd& mean, const Eigen::VectorXd& log_std,
                                     const Eigen::MatrixXd& actions);
double gaussian_entropy(const Eigen::VectorXd& log_std);

/// Activations kept from a forward pass for the backward pass.
struct NetCache {
  std::vector<Eigen::MatrixXd> policy;  // input, then each hidden activation
  std::vector<Eigen::MatrixXd> value;
};

class ActorCritic {
 public:
  explicit ActorCritic(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  Eigen::Index num_params() const { return params_.size(); }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  /// Orthogonal weights (gain sqrt 2 hidden, 0.01 policy output, 1 value output), zero biases.
  void initialize(Rng& rng);

  Eigen::VectorXd log_std() const { return params_.segment(log_std_offset_, spec_.output); }
  /// Projects the log-std parameters back into [kLogStdMin, kLogStdMax].
  void clamp_log_std();

  /// Columns of `obs` are samples.
  void forward(const Eigen::MatrixXd& obs, Eigen::MatrixXd& mean, Eigen::RowVectorXd& value,
               NetCache* cache = nullptr) const;
  Eigen::MatrixXd mean(const Eigen::MatrixXd& obs) const;

  /// Accumulates parameter gradients into `grad` from dL/dmean, dL/dvalue and dL/dlog_std.
  void backward(const NetCache& cache, const Eigen::MatrixXd& d_mean, const Eigen::RowVectorXd& d_value,
                const Eigen::VectorXd& d_log_std, Eigen::VectorXd& grad) const;

 private:
  struct Layer {
    Eigen::Index w = 0;  // offset of the column-major out x in weight block
    Eigen::Index b = 0;
    int in = 0;
    int out = 0;
  };

  std::vector<Layer> make_layers(int output, Eigen::Index& offset) const;
  Eigen::MatrixXd run(const std::vector<Layer>& layers, const Eigen::MatrixXd& x,
                      std::vector<Eigen::MatrixXd>* keep) const;
  void back(const std::vector<Layer>& layers, const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd d_out,
            Eigen::VectorXd& grad) const;

  MlpSpec spec_;
  std::vector<Layer> policy_;
  std::vector<Layer> value_;
  Eigen::Index log_std_offset_ = 0;
  Eigen::VectorXd params_;
};

}  // namespace biped
