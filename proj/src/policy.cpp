#include "stein_cv/policy.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

GaussianPolicy::GaussianPolicy(DenseNet mean_net, Vector log_std)
    : mean_net_(std::move(mean_net)), log_std_(std::move(log_std)) {
  Require(!mean_net_.empty(), ErrorCode::kInvalidArgument,
          "policy mean net has no layers");
  Require(mean_net_.output_dim() == log_std_.size(), ErrorCode::kDimension,
          "mean net output dim " + std::to_string(mean_net_.output_dim()) +
              " != log_std length " + std::to_string(log_std_.size()));
}

namespace {

constexpr double kOutputInitScale = 0.01;

}  // namespace

GaussianPolicy GaussianPolicy::Create(int state_dim, int action_dim,
                                      std::span<const int> hidden,
                                      double log_std_init, Rng& rng) {
  DenseNet net = DenseNet::Create(state_dim, hidden, action_dim,
                                  Activation::kRelu, Activation::kIdentity, rng);
  net.mutable_layers().back().weight *= kOutputInitScale;
  return GaussianPolicy(std::move(net), Vector::Constant(action_dim, log_std_init));
}

GaussianPolicy GaussianPolicy::Linear(const Matrix& gain, const Vector& log_std) {
  DenseLayer layer;
  layer.weight = -gain;
  layer.bias = Vector::Zero(gain.rows());
  layer.activation = Activation::kIdentity;
  return GaussianPolicy(DenseNet({layer}), log_std);
}

Matrix GaussianPolicy::gain() const {
  Require(is_linear() && mean_net_.layers()[0].activation == Activation::kIdentity,
          ErrorCode::kUnsupported, "gain() needs a linear mean");
  return -mean_net_.layers()[0].weight;
}

Vector GaussianPolicy::Params() const {
  Vector out(num_params());
  out << mean_net_.Flatten(), log_std_;
  return out;
}

void GaussianPolicy::SetParams(const VectorRef& params) {
  Require(params.size() == num_params(), ErrorCode::kDimension,
          "policy expects " + std::to_string(num_params()) + " parameters, got " +
              std::to_string(params.size()));
  mean_net_.Unflatten(params.head(num_mean_params()));
  log_std_ = params.tail(action_dim());
}

GaussianPolicy GaussianPolicy::WithParams(const VectorRef& params) const {
  GaussianPolicy copy = *this;
  copy.SetParams(params);
  return copy;
}

void GaussianPolicy::CheckStates(const MatrixRef& states) const {
  Require(states.rows() == state_dim(), ErrorCode::kDimension,
          "policy expects state dim " + std::to_string(state_dim()) + ", got " +
              std::to_string(states.rows()));
}

Matrix GaussianPolicy::Mean(const MatrixRef& states) const {
  CheckStates(states);
  return mean_net_.Forward(states);
}

Matrix GaussianPolicy::Act(const MatrixRef& states, const MatrixRef& noises) const {
  Require(noises.rows() == action_dim() && noises.cols() == states.cols(),
          ErrorCode::kDimension, "noise must be action_dim x batch");
  Matrix a = Mean(states);
  a += stddev().asDiagonal() * noises;
  return a;
}

GaussianPolicy::Draw GaussianPolicy::SampleAction(const VectorRef& state,
                                                  Rng& rng) const {
  Draw d;
  d.noise = rng.NormalVector(action_dim());
  d.action = Act(state, d.noise);
  return d;
}

Vector GaussianPolicy::LogProb(const MatrixRef& states,
                               const MatrixRef& actions) const {
  Require(actions.rows() == action_dim() && actions.cols() == states.cols(),
          ErrorCode::kDimension, "actions must be action_dim x batch");
  const Vector inv_std = (-log_std_).array().exp().matrix();
  const Matrix z = inv_std.asDiagonal() * (actions - Mean(states));
  const double constant =
      -log_std_.sum() - 0.5 * action_dim() * std::log(2.0 * std::numbers::pi);
  return (-0.5 * z.colwise().squaredNorm().array() + constant).matrix().transpose();
}

Matrix GaussianPolicy::ScoreAction(const MatrixRef& states,
                                   const MatrixRef& actions) const {
  Require(actions.rows() == action_dim() && actions.cols() == states.cols(),
          ErrorCode::kDimension, "actions must be action_dim x batch");
  const Vector inv_var = (-2.0 * log_std_).array().exp().matrix();
  return -(inv_var.asDiagonal() * (actions - Mean(states)));
}

Vector GaussianPolicy::ScoreTheta(const VectorRef& state,
                                  const VectorRef& action) const {
  return WeightedScoreTheta(state, action, Vector::Ones(1));
}

Vector GaussianPolicy::WeightedScoreTheta(const MatrixRef& states,
                                          const MatrixRef& actions,
                                          const VectorRef& weights) const {
  Require(weights.size() == states.cols(), ErrorCode::kDimension,
          "one weight per sample required");
  const Vector inv_var = (-2.0 * log_std_).array().exp().matrix();
  const Matrix diff = actions - Mean(states);
  // d log pi / d mu = Sigma^-1 (a - mu)
  Matrix upstream = inv_var.asDiagonal() * diff;
  upstream *= weights.asDiagonal();
  Vector out(num_params());
  out.head(num_mean_params()) = mean_net_.ParamGrad(states, upstream);
  const Matrix ls = ((inv_var.asDiagonal() * diff.cwiseProduct(diff)).array() - 1.0).matrix();
  out.tail(action_dim()) = ls * weights;
  return out;
}

Vector GaussianPolicy::ReparamVjp(const MatrixRef& states, const MatrixRef& noises,
                                  const MatrixRef& v) const {
  CheckStates(states);
  Require(noises.rows() == action_dim() && noises.cols() == states.cols() &&
              v.rows() == action_dim() && v.cols() == states.cols(),
          ErrorCode::kDimension, "noise and v must be action_dim x batch");
  Vector out(num_params());
  out.head(num_mean_params()) = mean_net_.ParamGrad(states, v);
  out.tail(action_dim()) =
      stddev().cwiseProduct(v.cwiseProduct(noises).rowwise().sum());
  return out;
}

double KlMean(const GaussianPolicy& old_policy, const GaussianPolicy& policy,
              const MatrixRef& states) {
  Require(old_policy.action_dim() == policy.action_dim(), ErrorCode::kDimension,
          "KL between policies of different action dims");
  if (states.cols() == 0) return 0.0;
  const Matrix dmu = policy.Mean(states) - old_policy.Mean(states);
  const Vector inv_var = (-2.0 * policy.log_std()).array().exp().matrix();
  // exp(0) is exactly 1, so the KL is exactly 0 for identical policies.
  const Vector ratio =
      (2.0 * (old_policy.log_std() - policy.log_std())).array().exp().matrix();
  const double const_part = (policy.log_std() - old_policy.log_std()).sum() +
                            0.5 * (ratio.array() - 1.0).sum();
  const double quad = 0.5 * (inv_var.asDiagonal() * dmu.cwiseProduct(dmu)).sum() /
                      static_cast<double>(states.cols());
  return const_part + quad;
}

Vector KlMeanGrad(const GaussianPolicy& old_policy, const GaussianPolicy& policy,
                  const MatrixRef& states) {
  Require(old_policy.action_dim() == policy.action_dim(), ErrorCode::kDimension,
          "KL between policies of different action dims");
  Vector out = Vector::Zero(policy.num_params());
  const auto n = static_cast<double>(states.cols());
  if (states.cols() == 0) return out;
  const Matrix dmu = policy.Mean(states) - old_policy.Mean(states);
  const Vector ratio =
      (2.0 * (old_policy.log_std() - policy.log_std())).array().exp().matrix();
  const Vector inv_var = (-2.0 * policy.log_std()).array().exp().matrix();
  const Matrix upstream = (inv_var.asDiagonal() * dmu) / n;
  out.head(policy.num_mean_params()) = policy.mean_net().ParamGrad(states, upstream);
  const Vector mean_sq = dmu.cwiseProduct(dmu).rowwise().sum() / n;
  out.tail(policy.action_dim()) =
      (1.0 - ratio.array() - mean_sq.cwiseProduct(inv_var).array()).matrix();
  return out;
}

}  // namespace steincv
