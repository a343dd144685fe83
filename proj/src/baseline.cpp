#include "stein_cv/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "stein_cv/error.hpp"
#include "stein_cv/optim.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

double Softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// softplus(kUnitRaw) == 1
const double kUnitRaw = std::log(std::exp(1.0) - 1.0);

Matrix StackRows(const MatrixRef& top, const MatrixRef& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

Matrix Columns(const MatrixRef& m, const std::vector<int>& idx) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = m.col(idx[j]);
  return out;
}

Vector Entries(const VectorRef& v, const std::vector<int>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out(j) = v(idx[j]);
  return out;
}

void CheckBatch(const Baseline& b, const MatrixRef& states, const MatrixRef& actions) {
  Require(states.rows() == b.state_dim(), ErrorCode::kDimension,
          "baseline expects state dim " + std::to_string(b.state_dim()) + ", got " +
              std::to_string(states.rows()));
  Require(actions.rows() == b.action_dim() && actions.cols() == states.cols(),
          ErrorCode::kDimension, "actions must be action_dim x batch");
}

// Objective over a subset of columns (all of them when idx is null); writes
// the gradient when asked.
using Objective = std::function<double(const Vector& params,
                                       const std::vector<int>* idx, Vector* grad)>;

FitReport RunAdam(Vector& params, int n_samples, const FitOptions& options,
                  const Objective& objective) {
  FitReport report;
  report.objective_before = objective(params, nullptr, nullptr);
  Adam adam(static_cast<int>(params.size()), options.lr);
  if (options.trainable.size() > 0) {
    Require(options.trainable.size() == params.size(), ErrorCode::kDimension,
            "trainable mask has the wrong length");
    adam.set_mask(options.trainable);
  }
  const bool minibatch = options.batch_size > 0 && options.batch_size < n_samples;
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(options.seed, 0x6669ULL);
  int cursor = n_samples;
  std::vector<int> batch;
  Vector grad;
  for (int step = 0; step < options.steps; ++step) {
    const std::vector<int>* idx = nullptr;
    if (minibatch) {
      if (cursor + options.batch_size > n_samples) {
        for (int i = n_samples - 1; i > 0; --i)
          std::swap(order[i], order[rng.NextU64() % static_cast<std::uint64_t>(i + 1)]);
        cursor = 0;
      }
      batch.assign(order.begin() + cursor, order.begin() + cursor + options.batch_size);
      cursor += options.batch_size;
      idx = &batch;
    }
    const double value = objective(params, idx, &grad);
    if (!std::isfinite(value) || !grad.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite fitting objective at step " << step << " (objective "
          << value << ", gradient norm " << grad.norm() << ")";
      Throw(ErrorCode::kNumeric, msg.str());
    }
    params = adam.Step(params, grad);
  }
  report.steps = options.steps;
  report.objective_after = objective(params, nullptr, nullptr);
  return report;
}

}  // namespace

const char* BaselineKindName(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kValue: return "value";
    case BaselineKind::kLinear: return "linear";
    case BaselineKind::kQuadratic: return "quadratic";
    case BaselineKind::kMlp: return "mlp";
  }
  return "value";
}

BaselineKind ParseBaselineKind(const std::string& name) {
  if (name == "value") return BaselineKind::kValue;
  if (name == "linear") return BaselineKind::kLinear;
  if (name == "quadratic") return BaselineKind::kQuadratic;
  if (name == "mlp") return BaselineKind::kMlp;
  Throw(ErrorCode::kConfig, "unknown baseline kind '" + name + "'");
}

Baseline MakeBaseline(BaselineKind kind, DenseNet value_net, DenseNet q_net,
                      DenseNet m_net, Vector diag_raw, ConcatNet mlp,
                      int action_dim) {
  Require(value_net.output_dim() == 1, ErrorCode::kDimension,
          "value net must have scalar output");
  const int ds = value_net.input_dim();
  switch (kind) {
    case BaselineKind::kValue: break;
    case BaselineKind::kLinear:
      Require(q_net.input_dim() == ds + action_dim && q_net.output_dim() == 1,
              ErrorCode::kDimension, "q net must map [s; a] to a scalar");
      break;
    case BaselineKind::kQuadratic:
      Require(m_net.input_dim() == ds && m_net.output_dim() == action_dim &&
                  diag_raw.size() == action_dim,
              ErrorCode::kDimension, "quadratic baseline parts have wrong shapes");
      break;
    case BaselineKind::kMlp:
      Require(mlp.lead_dim() == ds && mlp.trail_dim() == action_dim &&
                  mlp.output_dim() == 1,
              ErrorCode::kDimension, "mlp baseline has wrong shapes");
      break;
  }
  Baseline b;
  b.kind_ = kind;
  b.action_dim_ = action_dim;
  b.value_net_ = std::move(value_net);
  b.q_net_ = std::move(q_net);
  b.m_net_ = std::move(m_net);
  b.diag_raw_ = std::move(diag_raw);
  b.mlp_ = std::move(mlp);
  return b;
}

Baseline Baseline::Create(const BaselineSpec& spec, int state_dim, int action_dim,
                          Rng& rng) {
  DenseNet value_net = DenseNet::Create(state_dim, spec.value_hidden, 1,
                                        Activation::kTanh, Activation::kIdentity, rng);
  DenseNet q_net, m_net;
  Vector diag_raw;
  ConcatNet mlp;
  const int hidden[] = {spec.psi_hidden};
  switch (spec.kind) {
    case BaselineKind::kValue: break;
    case BaselineKind::kLinear:
      q_net = DenseNet::Create(state_dim + action_dim, hidden, 1, Activation::kRelu,
                               Activation::kIdentity, rng);
      break;
    case BaselineKind::kQuadratic:
      m_net = DenseNet::Create(state_dim, hidden, action_dim, Activation::kRelu,
                               Activation::kIdentity, rng);
      diag_raw = Vector::Constant(action_dim, kUnitRaw);
      break;
    case BaselineKind::kMlp:
      mlp = ConcatNet::Create(state_dim, action_dim, spec.psi_hidden,
                              Activation::kRelu, rng);
      break;
  }
  return MakeBaseline(spec.kind, std::move(value_net), std::move(q_net),
                      std::move(m_net), std::move(diag_raw), std::move(mlp),
                      action_dim);
}

int Baseline::num_psi_params() const {
  switch (kind_) {
    case BaselineKind::kValue: return 0;
    case BaselineKind::kLinear: return q_net_.num_params();
    case BaselineKind::kQuadratic:
      return m_net_.num_params() + static_cast<int>(diag_raw_.size());
    case BaselineKind::kMlp: return mlp_.num_params();
  }
  return 0;
}

Vector Baseline::PsiParams() const {
  switch (kind_) {
    case BaselineKind::kValue: return Vector();
    case BaselineKind::kLinear: return q_net_.Flatten();
    case BaselineKind::kQuadratic: {
      Vector out(num_psi_params());
      out << m_net_.Flatten(), diag_raw_;
      return out;
    }
    case BaselineKind::kMlp: return mlp_.Flatten();
  }
  return Vector();
}

void Baseline::SetPsiParams(const VectorRef& params) {
  Require(params.size() == num_psi_params(), ErrorCode::kDimension,
          "baseline expects " + std::to_string(num_psi_params()) +
              " psi parameters, got " + std::to_string(params.size()));
  switch (kind_) {
    case BaselineKind::kValue: break;
    case BaselineKind::kLinear: q_net_.Unflatten(params); break;
    case BaselineKind::kQuadratic:
      m_net_.Unflatten(params.head(m_net_.num_params()));
      diag_raw_ = params.tail(diag_raw_.size());
      break;
    case BaselineKind::kMlp: mlp_.Unflatten(params); break;
  }
}

Vector Baseline::QuadraticScale() const {
  Require(kind_ == BaselineKind::kQuadratic, ErrorCode::kUnsupported,
          "only the quadratic baseline has a scale");
  return diag_raw_.unaryExpr([](double x) { return Softplus(x); });
}

Vector Baseline::Value(const MatrixRef& states) const {
  Require(states.rows() == state_dim(), ErrorCode::kDimension,
          "value net expects state dim " + std::to_string(state_dim()));
  return (value_shift_ + value_scale_ * value_net_.Forward(states).row(0).array())
      .matrix()
      .transpose();
}

void Baseline::SetValueAffine(double shift, double scale) {
  Require(std::isfinite(shift) && std::isfinite(scale) && scale > 0.0,
          ErrorCode::kInvalidArgument, "value scale must be finite and positive");
  value_shift_ = shift;
  value_scale_ = scale;
}

void Baseline::CopyValueFrom(const Baseline& other) {
  Require(other.state_dim() == state_dim(), ErrorCode::kDimension,
          "value nets have different state dims");
  value_net_ = other.value_net_;
  value_shift_ = other.value_shift_;
  value_scale_ = other.value_scale_;
}

Vector Baseline::Psi(const MatrixRef& states, const MatrixRef& actions,
                     const GaussianPolicy& policy) const {
  CheckBatch(*this, states, actions);
  const auto n = states.cols();
  switch (kind_) {
    case BaselineKind::kValue: return Vector::Zero(n);
    case BaselineKind::kLinear: {
      const Matrix mu = policy.Mean(states);
      const Matrix g = ActionGrad(states, actions, policy);
      return g.cwiseProduct(actions - mu).colwise().sum().transpose();
    }
    case BaselineKind::kQuadratic: {
      const Matrix delta = actions - m_net_.Forward(states);
      const Vector inv_d = QuadraticScale().cwiseInverse();
      return -(inv_d.asDiagonal() * delta.cwiseProduct(delta)).colwise().sum().transpose();
    }
    case BaselineKind::kMlp: return mlp_.Forward(states, actions).row(0).transpose();
  }
  return Vector();
}

Vector Baseline::Phi(const MatrixRef& states, const MatrixRef& actions,
                     const GaussianPolicy& policy) const {
  return Value(states) + Psi(states, actions, policy);
}

Matrix Baseline::ActionGrad(const MatrixRef& states, const MatrixRef& actions,
                            const GaussianPolicy& policy) const {
  CheckBatch(*this, states, actions);
  const auto n = states.cols();
  switch (kind_) {
    case BaselineKind::kValue: return Matrix::Zero(action_dim_, n);
    case BaselineKind::kLinear: {
      const Matrix x = StackRows(states, policy.Mean(states));
      return q_net_.InputGrad(x, Matrix::Ones(1, n)).bottomRows(action_dim_);
    }
    case BaselineKind::kQuadratic: {
      const Matrix delta = actions - m_net_.Forward(states);
      const Vector inv_d = QuadraticScale().cwiseInverse();
      return -2.0 * (inv_d.asDiagonal() * delta);
    }
    case BaselineKind::kMlp:
      return mlp_.InputGrad(states, actions, Matrix::Ones(1, n)).second;
  }
  return Matrix();
}

Matrix Baseline::ActionHessian(const VectorRef& state, const VectorRef& action,
                               const GaussianPolicy& policy) const {
  Matrix diag = ActionHessianDiag(state, action, policy);
  return Matrix(diag.col(0).asDiagonal());
}

Matrix Baseline::ActionHessianDiag(const MatrixRef& states, const MatrixRef& actions,
                                   const GaussianPolicy& /*policy*/) const {
  CheckBatch(*this, states, actions);
  const auto n = states.cols();
  switch (kind_) {
    case BaselineKind::kValue:
    case BaselineKind::kLinear: return Matrix::Zero(action_dim_, n);
    case BaselineKind::kQuadratic:
      return (-2.0 * QuadraticScale().cwiseInverse()).replicate(1, n);
    case BaselineKind::kMlp: break;
  }
  Throw(ErrorCode::kUnsupported,
        "the mlp baseline has no action Hessian; use the eq15 variance term");
}

Vector Baseline::PsiParamVjp(const MatrixRef& states, const MatrixRef& actions,
                             const GaussianPolicy& policy, const VectorRef& c,
                             const Matrix& tau) const {
  CheckBatch(*this, states, actions);
  const auto n = states.cols();
  Require(c.size() == n, ErrorCode::kDimension, "one weight per sample required");
  const bool has_tau = tau.size() > 0;
  if (has_tau) {
    Require(tau.rows() == action_dim_ && tau.cols() == n, ErrorCode::kDimension,
            "tau must be action_dim x batch");
  }
  switch (kind_) {
    case BaselineKind::kValue: return Vector();
    case BaselineKind::kLinear: {
      // sum_t <grad_a q(s_t, mu_t), c_t delta_t + tau_t>, differentiated in w
      // through one directional pass along [0; c delta + tau].
      const Matrix mu = policy.Mean(states);
      Matrix dir = (actions - mu) * c.asDiagonal();
      if (has_tau) dir += tau;
      const Matrix x = StackRows(states, mu);
      const Matrix tangent = StackRows(Matrix::Zero(states.rows(), n), dir);
      return q_net_.Jvp(x, tangent, Matrix::Ones(1, n)).dir_param_grad;
    }
    case BaselineKind::kQuadratic: {
      const Matrix delta = actions - m_net_.Forward(states);
      const Vector d = QuadraticScale();
      const Vector inv_d = d.cwiseInverse();
      Matrix w = delta * c.asDiagonal();
      if (has_tau) w += tau;
      Vector out(num_psi_params());
      out.head(m_net_.num_params()) =
          m_net_.ParamGrad(states, 2.0 * (inv_d.asDiagonal() * w));
      // d/dD_i of c psi + <tau, -2 delta / D> = (c delta_i^2 + 2 tau_i delta_i) / D_i^2
      Matrix num = delta.cwiseProduct(delta) * c.asDiagonal();
      if (has_tau) num += 2.0 * tau.cwiseProduct(delta);
      const Vector dd = num.rowwise().sum().cwiseProduct(inv_d).cwiseProduct(inv_d);
      out.tail(action_dim_) =
          dd.cwiseProduct(diag_raw_.unaryExpr([](double x) { return Sigmoid(x); }));
      return out;
    }
    case BaselineKind::kMlp: {
      if (!has_tau) return mlp_.ParamGrad(states, actions, c.transpose());
      return mlp_.Jvp(states, actions, Matrix::Zero(states.rows(), n), tau,
                      Matrix::Ones(1, n), c.transpose())
          .dir_param_grad;
    }
  }
  return Vector();
}

bool Baseline::operator==(const Baseline& other) const {
  return kind_ == other.kind_ && action_dim_ == other.action_dim_ &&
         value_net_ == other.value_net_ && value_shift_ == other.value_shift_ &&
         value_scale_ == other.value_scale_ && q_net_ == other.q_net_ &&
         m_net_ == other.m_net_ && diag_raw_.size() == other.diag_raw_.size() &&
         diag_raw_ == other.diag_raw_ && mlp_ == other.mlp_;
}

// --- fitting ----------------------------------------------------------------

// Floor on the value scale, relative to max(|mean return|, 1).
constexpr double kMinValueScale = 1e-3;

double ValueObjective(const Baseline& b, const MatrixRef& states,
                      const VectorRef& returns) {
  Require(returns.size() == states.cols(), ErrorCode::kDimension,
          "one return per state required");
  if (states.cols() == 0) return 0.0;
  return (b.Value(states) - returns).squaredNorm() / static_cast<double>(states.cols());
}

FitReport FitValue(Baseline& b, const MatrixRef& states, const VectorRef& returns,
                   const FitOptions& options) {
  Require(returns.size() == states.cols(), ErrorCode::kDimension,
          "one return per state required");
  const int n = static_cast<int>(states.cols());
  if (n == 0 || options.steps == 0) {
    FitReport r;
    r.objective_before = r.objective_after = ValueObjective(b, states, returns);
    return r;
  }
  const double mean = returns.mean();
  const double spread = std::sqrt((returns.array() - mean).square().mean());
  const double floor = kMinValueScale * std::max(std::abs(mean), 1.0);
  double sd = spread;
  if (spread < floor) {
    // Near-constant returns: size the scale to the current error instead.
    const double miss = std::sqrt((b.Value(states) - returns).squaredNorm() / n);
    sd = std::max(miss, floor);
  }
  Require(std::isfinite(mean) && std::isfinite(sd), ErrorCode::kNumeric,
          "non-finite value targets");
  DenseLayer& last = b.mutable_value_net().mutable_layers().back();
  last.weight *= b.value_scale() / sd;
  last.bias = ((b.value_scale() * last.bias.array() + b.value_shift() - mean) / sd).matrix();
  b.SetValueAffine(mean, sd);
  const Vector targets = ((returns.array() - mean) / sd).matrix();

  DenseNet net = b.value_net();
  Objective objective = [&](const Vector& params, const std::vector<int>* idx,
                            Vector* grad) {
    net.Unflatten(params);
    Matrix sub_states;
    Vector sub_returns;
    if (idx) {
      sub_states = Columns(states, *idx);
      sub_returns = Entries(targets, *idx);
    }
    const MatrixRef s = idx ? MatrixRef(sub_states) : states;
    const VectorRef r = idx ? VectorRef(sub_returns) : VectorRef(targets);
    const double m = static_cast<double>(s.cols());
    const Vector resid = net.Forward(s).row(0).transpose() - r;
    if (grad) *grad = net.ParamGrad(s, (2.0 / m) * resid.transpose());
    return resid.squaredNorm() / m;
  };
  Vector params = b.value_net().Flatten();
  const double before = ValueObjective(b, states, returns);
  FitReport report = RunAdam(params, n, options, objective);
  b.mutable_value_net().Unflatten(params);
  report.objective_before = before;
  report.objective_after = ValueObjective(b, states, returns);
  return report;
}

double FitQObjective(const Baseline& b, const GaussianPolicy& policy,
                     const MatrixRef& states, const MatrixRef& actions,
                     const VectorRef& adv) {
  Require(adv.size() == states.cols(), ErrorCode::kDimension,
          "one target per sample required");
  if (states.cols() == 0) return 0.0;
  return (b.Psi(states, actions, policy) - adv).squaredNorm() /
         static_cast<double>(states.cols());
}

namespace {

// Shared driver for the psi fits: `loss` evaluates the objective on a batch of
// columns and, when asked, its psi-parameter gradient.
using PsiLoss = std::function<double(const Baseline&, const MatrixRef&,
                                     const MatrixRef&, const VectorRef&, Vector*)>;

FitReport FitPsi(Baseline& b, const MatrixRef& states, const MatrixRef& actions,
                 const VectorRef& adv, const FitOptions& options,
                 const PsiLoss& loss) {
  Require(adv.size() == states.cols() && actions.cols() == states.cols(),
          ErrorCode::kDimension, "one action and target per state required");
  FitReport report;
  if (b.kind() == BaselineKind::kValue) {
    report.noop = true;
    return report;
  }
  const int n = static_cast<int>(states.cols());
  if (n == 0 || options.steps == 0) {
    report.objective_before = report.objective_after =
        n == 0 ? 0.0 : loss(b, states, actions, adv, nullptr);
    return report;
  }
  Baseline work = b;
  Objective objective = [&](const Vector& params, const std::vector<int>* idx,
                            Vector* grad) {
    work.SetPsiParams(params);
    if (!idx) return loss(work, states, actions, adv, grad);
    const Matrix s = Columns(states, *idx);
    const Matrix a = Columns(actions, *idx);
    const Vector t = Entries(adv, *idx);
    return loss(work, s, a, t, grad);
  };
  Vector params = b.PsiParams();
  report = RunAdam(params, n, options, objective);
  b.SetPsiParams(params);
  return report;
}

}  // namespace

FitReport FitQ(Baseline& b, const GaussianPolicy& policy, const MatrixRef& states,
               const MatrixRef& actions, const VectorRef& adv,
               const FitOptions& options) {
  CheckBatch(b, states, actions);
  return FitPsi(b, states, actions, adv, options,
                [&policy](const Baseline& w, const MatrixRef& s, const MatrixRef& a,
                          const VectorRef& t, Vector* grad) {
                  const double m = static_cast<double>(s.cols());
                  const Vector resid = w.Psi(s, a, policy) - t;
                  if (grad) *grad = w.PsiParamVjp(s, a, policy, (2.0 / m) * resid, Matrix());
                  return resid.squaredNorm() / m;
                });
}

double MinVarObjectiveGrad(const Baseline& b, const GaussianPolicy& policy,
                           const MatrixRef& states, const MatrixRef& actions,
                           const VectorRef& adv, Vector* grad) {
  CheckBatch(b, states, actions);
  Require(adv.size() == states.cols(), ErrorCode::kDimension,
          "one target per sample required");
  const int n = static_cast<int>(states.cols());
  const int da = b.action_dim();
  if (n == 0) {
    if (grad) *grad = Vector::Zero(b.num_psi_params());
    return 0.0;
  }
  const Vector psi = b.Psi(states, actions, policy);
  const Matrix v = b.ActionGrad(states, actions, policy);
  const Matrix score = policy.ScoreAction(states, actions);
  const Vector inv_var = (-2.0 * policy.log_std()).array().exp().matrix();

  Vector d_rho(n);
  Matrix d_v(da, n);
  Matrix S(da, da), g_sigma(da, da);
  Vector g_mu(da);
  double total = 0.0;
  for (int t = 0; t < n; ++t) {
    const auto c = score.col(t);
    const auto vt = v.col(t);
    const double rho = adv(t) - psi(t);
    g_mu = -c * rho + vt;
    S = 0.5 * c * c.transpose();
    S.diagonal() -= 0.5 * inv_var;
    g_sigma = S * rho - 0.5 * c * vt.transpose();
    total += g_mu.squaredNorm() + g_sigma.squaredNorm();
    d_rho(t) = -2.0 * g_mu.dot(c) + 2.0 * g_sigma.cwiseProduct(S).sum();
    d_v.col(t) = 2.0 * g_mu - g_sigma.transpose() * c;
  }
  const double m = static_cast<double>(n);
  const double objective = total / m;
  if (grad) {
    // rho = adv - psi, so d/dpsi = -d/drho.
    *grad = b.PsiParamVjp(states, actions, policy, -d_rho / m, d_v / m);
  }
  return objective;
}

double MinVarObjective(const Baseline& b, const GaussianPolicy& policy,
                       const MatrixRef& states, const MatrixRef& actions,
                       const VectorRef& adv) {
  return MinVarObjectiveGrad(b, policy, states, actions, adv, nullptr);
}

FitReport MinVarFit(Baseline& b, const GaussianPolicy& policy,
                    const MatrixRef& states, const MatrixRef& actions,
                    const VectorRef& adv, const FitOptions& options) {
  CheckBatch(b, states, actions);
  return FitPsi(b, states, actions, adv, options,
                [&policy](const Baseline& w, const MatrixRef& s, const MatrixRef& a,
                          const VectorRef& t, Vector* grad) {
                  return MinVarObjectiveGrad(w, policy, s, a, t, grad);
                });
}

}  // namespace steincv
