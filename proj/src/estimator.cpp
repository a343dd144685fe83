#include "stein_cv/estimator.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "stein_cv/baseline.hpp"
#include "stein_cv/envs.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

Vector McReturns(const Trajectory& traj, double gamma) {
  const int T = traj.length();
  Vector out(T);
  double running = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    running = traj.rewards(t) + gamma * running;
    out(t) = running;
  }
  return out;
}

Vector Gae(const Trajectory& traj, const VectorRef& values, double final_value,
           double gamma, double lambda) {
  const int T = traj.length();
  Require(values.size() == T, ErrorCode::kDimension,
          "gae: need one value per step, got " + std::to_string(values.size()) +
              " for " + std::to_string(T) + " steps");
  Vector adv(T);
  double next_value = traj.terminal ? 0.0 : final_value;
  double running = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double delta = traj.rewards(t) + gamma * next_value - values(t);
    running = delta + gamma * lambda * running;
    adv(t) = running;
    next_value = values(t);
  }
  return adv;
}

Vector Gae(const Trajectory& traj, const ValueFn& value_fn, double gamma,
           double lambda) {
  const Vector values = traj.length() > 0 ? value_fn(traj.states) : Vector();
  const double final_value = traj.terminal ? 0.0 : value_fn(traj.final_state)(0);
  return Gae(traj, values, final_value, gamma, lambda);
}

namespace {

void Normalize(Batch& b) {
  const int n = b.size();
  b.adv = b.adv_raw;
  if (n < 2) return;
  b.adv_mean = b.adv_raw.mean();
  const double var =
      (b.adv_raw.array() - b.adv_mean).square().sum() / static_cast<double>(n - 1);
  b.adv_std = std::sqrt(var);
  b.adv = ((b.adv_raw.array() - b.adv_mean) / (b.adv_std + 1e-8)).matrix();
  b.normalized = true;
}

}  // namespace

Batch BuildBatch(const std::vector<Trajectory>& trajs, const ValueFn& value_fn,
                 const AdvantageOptions& options) {
  int n = 0;
  for (const Trajectory& t : trajs) n += t.length();
  Require(n > 0, ErrorCode::kInvalidArgument, "batch has no steps");
  const Trajectory& first = trajs.front();
  Batch b;
  b.states.resize(first.states.rows(), n);
  b.actions.resize(first.actions.rows(), n);
  b.noises.resize(first.noises.rows(), n);
  b.rewards.resize(n);
  b.values.resize(n);
  b.adv_raw.resize(n);
  int offset = 0;
  for (const Trajectory& t : trajs) {
    const int T = t.length();
    if (T == 0) continue;
    const Vector values = value_fn(t.states);
    const double final_value = t.terminal ? 0.0 : value_fn(t.final_state)(0);
    b.states.middleCols(offset, T) = t.states;
    b.actions.middleCols(offset, T) = t.actions;
    b.noises.middleCols(offset, T) = t.noises;
    b.rewards.segment(offset, T) = t.rewards;
    b.values.segment(offset, T) = values;
    b.adv_raw.segment(offset, T) = Gae(t, values, final_value, options.gamma, options.lambda);
    offset += T;
  }
  b.q_hat = b.adv_raw + b.values;
  b.adv = b.adv_raw;
  if (options.normalize) Normalize(b);
  return b;
}

Batch BatchFromQ(const Matrix& states, const Matrix& actions, const Matrix& noises,
                 const Vector& q_hat, const Vector& values, bool normalize) {
  const auto n = states.cols();
  Require(actions.cols() == n && noises.cols() == n && q_hat.size() == n &&
              values.size() == n,
          ErrorCode::kDimension, "batch columns disagree");
  Batch b;
  b.states = states;
  b.actions = actions;
  b.noises = noises;
  b.rewards = Vector::Zero(n);
  b.values = values;
  b.q_hat = q_hat;
  b.adv_raw = q_hat - values;
  b.adv = b.adv_raw;
  if (normalize) Normalize(b);
  return b;
}

Batch SubBatch(const Batch& batch, const std::vector<int>& idx) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Batch b;
  b.states.resize(batch.states.rows(), m);
  b.actions.resize(batch.actions.rows(), m);
  b.noises.resize(batch.noises.rows(), m);
  b.rewards.resize(m);
  b.values.resize(m);
  b.adv_raw.resize(m);
  b.adv.resize(m);
  b.q_hat.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const int i = idx[j];
    b.states.col(j) = batch.states.col(i);
    b.actions.col(j) = batch.actions.col(i);
    b.noises.col(j) = batch.noises.col(i);
    b.rewards(j) = batch.rewards(i);
    b.values(j) = batch.values(i);
    b.adv_raw(j) = batch.adv_raw(i);
    b.adv(j) = batch.adv(i);
    b.q_hat(j) = batch.q_hat(i);
  }
  b.adv_mean = batch.adv_mean;
  b.adv_std = batch.adv_std;
  b.normalized = batch.normalized;
  return b;
}

const char* SigmaFormulaName(SigmaFormula f) {
  return f == SigmaFormula::kEq15 ? "eq15" : "eq16";
}

SigmaFormula ParseSigmaFormula(const std::string& name) {
  if (name == "eq15") return SigmaFormula::kEq15;
  if (name == "eq16") return SigmaFormula::kEq16;
  Throw(ErrorCode::kConfig, "unknown sigma formula '" + name + "'");
}

Vector SteinSum(const GaussianPolicy& policy, const MatrixRef& states,
                const MatrixRef& actions, const SteinTerms& terms) {
  const auto n = states.cols();
  const int da = policy.action_dim();
  Require(actions.rows() == da && actions.cols() == n && terms.rho.size() == n,
          ErrorCode::kDimension, "estimator inputs disagree in shape");
  const bool has_v = terms.v.size() > 0;
  const bool has_sigma = terms.sigma_term.size() > 0;
  const bool has_w = terms.weights.size() > 0;
  Require((!has_v || (terms.v.rows() == da && terms.v.cols() == n)) &&
              (!has_sigma ||
               (terms.sigma_term.rows() == da && terms.sigma_term.cols() == n)) &&
              (!has_w || terms.weights.size() == n),
          ErrorCode::kDimension, "estimator terms have the wrong shape");

  const Vector inv_var = (-2.0 * policy.log_std()).array().exp().matrix();
  const Matrix delta = actions - policy.Mean(states);
  // Sigma^-1 (a - mu) is d log pi / d mu.
  const Matrix dmu = inv_var.asDiagonal() * delta;

  Matrix upstream = dmu * terms.rho.asDiagonal();
  if (has_v) upstream += terms.v;
  Matrix ls = ((inv_var.asDiagonal() * delta.cwiseProduct(delta)).array() - 1.0).matrix() *
              terms.rho.asDiagonal();
  if (has_sigma) ls += terms.sigma_term;
  if (has_w) {
    upstream *= terms.weights.asDiagonal();
    ls *= terms.weights.asDiagonal();
  }
  Vector out(policy.num_params());
  out.head(policy.num_mean_params()) = policy.mean_net().ParamGrad(states, upstream);
  out.tail(da) = ls.rowwise().sum();
  return out;
}

namespace {

GradientEstimate Finish(Vector sum, int n, const char* name, const char* formula) {
  Require(n > 0, ErrorCode::kInvalidArgument, "estimator needs a non-empty batch");
  GradientEstimate g;
  g.values = sum / static_cast<double>(n);
  g.n_samples = n;
  g.estimator = name;
  g.formula = formula;
  Require(g.values.allFinite(), ErrorCode::kNumeric,
          std::string(name) + ": non-finite gradient estimate");
  return g;
}

}  // namespace

GradientEstimate GradVanilla(const Batch& batch, const GaussianPolicy& policy) {
  SteinTerms terms;
  terms.rho = batch.q_hat;
  return Finish(SteinSum(policy, batch.states, batch.actions, terms), batch.size(),
                "vanilla", "");
}

GradientEstimate GradValueBaseline(const Batch& batch, const GaussianPolicy& policy) {
  SteinTerms terms;
  terms.rho = batch.adv;
  return Finish(SteinSum(policy, batch.states, batch.actions, terms), batch.size(),
                "value", "");
}

SteinTerms SteinTermsFor(const Batch& batch, const GaussianPolicy& policy,
                         const Baseline& baseline, SigmaFormula formula,
                         const GaussianPolicy* basis) {
  const GaussianPolicy& ref = basis ? *basis : policy;
  SteinTerms terms;
  terms.rho = batch.adv - baseline.Psi(batch.states, batch.actions, ref);
  terms.v = baseline.ActionGrad(batch.states, batch.actions, ref);
  const Vector var = (2.0 * policy.log_std()).array().exp().matrix();
  if (formula == SigmaFormula::kEq15) {
    // -(1/2) <grad_a log pi grad_a psi', dSigma/dlog_std_i> per coordinate
    const Matrix score = policy.ScoreAction(batch.states, batch.actions);
    terms.sigma_term = -(var.asDiagonal() * score.cwiseProduct(terms.v));
  } else {
    if (baseline.kind() == BaselineKind::kMlp) {
      Throw(ErrorCode::kUnsupported,
            "eq16 needs the action Hessian, which the mlp baseline does not "
            "provide; use eq15");
    }
    terms.sigma_term =
        var.asDiagonal() * baseline.ActionHessianDiag(batch.states, batch.actions, ref);
  }
  return terms;
}

GradientEstimate GradStein(const Batch& batch, const GaussianPolicy& policy,
                           const Baseline& baseline, SigmaFormula formula) {
  const SteinTerms terms = SteinTermsFor(batch, policy, baseline, formula);
  return Finish(SteinSum(policy, batch.states, batch.actions, terms), batch.size(),
                "stein", SigmaFormulaName(formula));
}

GradientEstimate GradReparam(const Batch& batch, const GaussianPolicy& policy,
                             const Baseline& baseline) {
  const Matrix v = baseline.ActionGrad(batch.states, batch.actions, policy);
  return Finish(policy.ReparamVjp(batch.states, batch.noises, v), batch.size(),
                "reparam", "");
}

GradientEstimate GradQpropForm(const Batch& batch, const GaussianPolicy& policy,
                               const Baseline& linear_baseline) {
  Require(linear_baseline.kind() == BaselineKind::kLinear, ErrorCode::kUnsupported,
          "the Q-prop form needs a linear baseline");
  // grad_theta mu(s) . grad_a q(s, mu(s)) on the mean block; the log_std block
  // carries only the score term.
  SteinTerms terms;
  terms.rho = batch.adv - linear_baseline.Psi(batch.states, batch.actions, policy);
  const Matrix mu = policy.Mean(batch.states);
  Matrix x(batch.states.rows() + mu.rows(), batch.size());
  x << batch.states, mu;
  terms.v = linear_baseline.q_net()
                .InputGrad(x, Matrix::Ones(1, batch.size()))
                .bottomRows(policy.action_dim());
  return Finish(SteinSum(policy, batch.states, batch.actions, terms), batch.size(),
                "qprop", "");
}

double SteinIdentityResidual(const GaussianPolicy& policy, const Baseline& baseline,
                             const VectorRef& state, int n, Rng& rng,
                             const ReparamFn& reparam) {
  Require(n > 0, ErrorCode::kInvalidArgument, "identity check needs n > 0");
  const int da = policy.action_dim();
  const Matrix states = state.replicate(1, n);
  Matrix noises(da, n);
  for (int t = 0; t < n; ++t)
    for (int i = 0; i < da; ++i) noises(i, t) = rng.Normal();
  const Matrix actions = policy.Act(states, noises);
  const Vector phi = baseline.Phi(states, actions, policy);
  const Matrix v = baseline.ActionGrad(states, actions, policy);
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vector lhs = policy.WeightedScoreTheta(states, actions, phi) * inv_n;
  const Vector rhs = (reparam ? reparam(policy, states, noises, v)
                              : policy.ReparamVjp(states, noises, v)) *
                     inv_n;
  double scale = rhs.norm();
  if (scale == 0.0) {
    double sq = 0.0;
    for (int t = 0; t < n; ++t)
      sq += (policy.ScoreTheta(states.col(t), actions.col(t)) * phi(t)).squaredNorm();
    scale = std::sqrt(sq * inv_n);
  }
  if (scale == 0.0) return 0.0;
  return (lhs - rhs).norm() / scale;
}

VarianceSummary EstimatorVariance(const std::vector<Vector>& estimates) {
  Require(estimates.size() >= 2, ErrorCode::kInvalidArgument,
          "variance needs at least two estimates");
  const auto p = estimates.front().size();
  Vector mean = Vector::Zero(p);
  for (const Vector& g : estimates) {
    Require(g.size() == p, ErrorCode::kDimension, "estimates differ in length");
    mean += g;
  }
  const double m = static_cast<double>(estimates.size());
  mean /= m;
  Vector var = Vector::Zero(p);
  for (const Vector& g : estimates) var += (g - mean).cwiseAbs2();
  VarianceSummary out;
  out.per_coord = var / (m - 1.0);
  out.trace = out.per_coord.sum();
  out.log_trace = out.trace > 0.0 ? std::log(out.trace)
                                  : -std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace steincv
