#ifndef STEIN_CV_POLICY_HPP_
#define STEIN_CV_POLICY_HPP_

#include <span>

#include "stein_cv/diffnet.hpp"

namespace steincv {

class Rng;

// Diagonal Gaussian policy a = mu(s) + exp(log_std) * xi with an MLP mean and
// a state-independent log standard deviation.
//
// Parameter order: mean-net parameters (DenseNet flattening), then log_std.
// Batched members take states/actions/noises as columns.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(DenseNet mean_net, Vector log_std);

  // Hidden layers use relu; an empty `hidden` gives a linear mean W s + b.
  // The output layer starts at 0.01x its Xavier draw.
  static GaussianPolicy Create(int state_dim, int action_dim,
                               std::span<const int> hidden, double log_std_init,
                               Rng& rng);
  // Linear policy mu(s) = -K s with zero bias.
  static GaussianPolicy Linear(const Matrix& gain, const Vector& log_std);

  int state_dim() const { return mean_net_.input_dim(); }
  int action_dim() const { return static_cast<int>(log_std_.size()); }
  int num_params() const { return mean_net_.num_params() + action_dim(); }
  int num_mean_params() const { return mean_net_.num_params(); }
  bool is_linear() const { return mean_net_.layers().size() == 1; }

  const DenseNet& mean_net() const { return mean_net_; }
  const Vector& log_std() const { return log_std_; }
  Vector stddev() const { return log_std_.array().exp().matrix(); }
  // -W of a linear policy; throws for nonlinear means.
  Matrix gain() const;

  Vector Params() const;
  void SetParams(const VectorRef& params);
  GaussianPolicy WithParams(const VectorRef& params) const;

  Matrix Mean(const MatrixRef& states) const;
  // The reparameterization map f(s, xi).
  Matrix Act(const MatrixRef& states, const MatrixRef& noises) const;

  struct Draw {
    Vector action;
    Vector noise;
  };
  Draw SampleAction(const VectorRef& state, Rng& rng) const;

  Vector LogProb(const MatrixRef& states, const MatrixRef& actions) const;
  // d log pi / d a, per column.
  Matrix ScoreAction(const MatrixRef& states, const MatrixRef& actions) const;
  // d log pi / d theta for one (s, a).
  Vector ScoreTheta(const VectorRef& state, const VectorRef& action) const;
  // sum_t weights_t * d log pi(a_t|s_t) / d theta.
  Vector WeightedScoreTheta(const MatrixRef& states, const MatrixRef& actions,
                            const VectorRef& weights) const;
  // sum_t (d f(s_t, xi_t) / d theta) v_t.
  Vector ReparamVjp(const MatrixRef& states, const MatrixRef& noises,
                    const MatrixRef& v) const;

  bool operator==(const GaussianPolicy& other) const {
    return mean_net_ == other.mean_net_ && log_std_ == other.log_std_;
  }

 private:
  void CheckStates(const MatrixRef& states) const;

  DenseNet mean_net_;
  Vector log_std_;
};

// Mean over states of KL(old(.|s) || current(.|s)).
double KlMean(const GaussianPolicy& old_policy, const GaussianPolicy& policy,
              const MatrixRef& states);
// Gradient of KlMean with respect to the parameters of `policy`.
Vector KlMeanGrad(const GaussianPolicy& old_policy, const GaussianPolicy& policy,
                  const MatrixRef& states);

}  // namespace steincv

#endif  // STEIN_CV_POLICY_HPP_
