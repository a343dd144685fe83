#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "stein_cv/baseline.hpp"
#include "stein_cv/envs.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/harness.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kKinkMargin = 1e-3;

using ScalarFn = std::function<double(const Vector&)>;
using VectorFn = std::function<Vector(const Vector&)>;

Vector Gradient(const ScalarFn& f, Vector x) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    x(i) = x0 + kFdStep;
    const double up = f(x);
    x(i) = x0 - kFdStep;
    const double down = f(x);
    x(i) = x0;
    g(i) = (up - down) / (2.0 * kFdStep);
  }
  return g;
}

// Directional derivative of a vector function.
Vector Directional(const VectorFn& f, const Vector& x, const Vector& dir) {
  return (f(x + kFdStep * dir) - f(x - kFdStep * dir)) / (2.0 * kFdStep);
}

double RelErr(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-4});
  return (a - b).norm() / scale;
}

bool AwayFromKinks(const DenseNet& net, const MatrixRef& x) {
  const std::vector<Matrix> z = net.PreActivations(x);
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (net.layers()[k].activation != Activation::kRelu) continue;
    if (z[k].cwiseAbs().minCoeff() < kKinkMargin) return false;
  }
  return true;
}

void Randomize(DenseNet& net, Rng& rng, double scale) {
  Vector p(net.num_params());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = scale * rng.Normal();
  net.Unflatten(p);
}

Vector RandomVector(Rng& rng, int n, double scale = 1.0) {
  return scale * rng.NormalVector(n);
}

GaussianPolicy ToyPolicy(int ds, int da, Rng& rng) {
  const int hidden[] = {8};
  GaussianPolicy p = GaussianPolicy::Create(ds, da, hidden, 0.0, rng);
  Vector params = p.Params();
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = 0.7 * rng.Normal();
  params.tail(da) = 0.3 * rng.NormalVector(da);
  p.SetParams(params);
  return p;
}

Baseline ToyBaseline(BaselineKind kind, int ds, int da, int psi_hidden, Rng& rng) {
  BaselineSpec spec;
  spec.kind = kind;
  spec.value_hidden = {8};
  spec.psi_hidden = psi_hidden;
  Baseline b = Baseline::Create(spec, ds, da, rng);
  Vector w = b.PsiParams();
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.5 * rng.Normal();
  b.SetPsiParams(w);
  return b;
}

bool BaselineAwayFromKinks(const Baseline& b, const GaussianPolicy& policy,
                           const VectorRef& s, const VectorRef& a) {
  switch (b.kind()) {
    case BaselineKind::kValue: return true;
    case BaselineKind::kLinear: {
      Vector x(s.size() + a.size());
      x << s, policy.Mean(s);
      return AwayFromKinks(b.q_net(), x);
    }
    case BaselineKind::kQuadratic: return AwayFromKinks(b.m_net(), s);
    case BaselineKind::kMlp: {
      if (!AwayFromKinks(b.mlp().encoder(), s)) return false;
      const Vector code = b.mlp().encoder().Forward(s);
      Vector x(code.size() + a.size());
      x << code, a;
      return AwayFromKinks(b.mlp().head(), x);
    }
  }
  return true;
}

struct Accumulator {
  double worst = 0.0;
  void Add(double err) { worst = std::max(worst, std::isfinite(err) ? err : INFINITY); }
};

CheckRow Row(std::string name, long n, double residual, double threshold, bool pass) {
  return CheckRow{std::move(name), n, residual, threshold, pass};
}

CheckRow Below(std::string name, long n, double residual, double threshold) {
  return Row(std::move(name), n, residual, threshold,
             std::isfinite(residual) && residual < threshold);
}

double MaxAbsDiff(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

CheckRow Exact(std::string name, long n, const Vector& a, const Vector& b) {
  const double diff = MaxAbsDiff(a, b);
  const bool same = a.size() == b.size() &&
                    std::equal(a.data(), a.data() + a.size(), b.data());
  return Row(std::move(name), n, diff, 0.0, same);
}

// --- finite-difference checks ---------------------------------------------

void DerivativeChecks(const ExperimentConfig& config, const Rng& root,
                      std::vector<CheckRow>& rows) {
  const int instances = config.check.fd_instances;
  Accumulator net_param, net_input, net_jvp;
  Accumulator score_theta, score_action, reparam;
  Accumulator phi_grad[4], hessian, minvar;

  for (int inst = 0; inst < instances; ++inst) {
    Rng rng = root.Child({1, static_cast<std::uint64_t>(inst)});

    // Dense nets: relu for first-order checks, tanh for the directional one.
    {
      const int hidden[] = {6, 5};
      DenseNet relu = DenseNet::Create(3, hidden, 2, Activation::kRelu,
                                       Activation::kIdentity, rng);
      Randomize(relu, rng, 0.8);
      Vector x = RandomVector(rng, 3);
      while (!AwayFromKinks(relu, x)) x = RandomVector(rng, 3);
      const Vector up = RandomVector(rng, 2);
      const Vector params = relu.Flatten();
      net_param.Add(RelErr(relu.ParamGrad(x, up),
                           Gradient([&](const Vector& p) {
                             return up.dot(relu.WithParams(p).Forward(x).col(0));
                           }, params)));
      net_input.Add(RelErr(relu.InputGrad(x, up), Gradient([&](const Vector& xx) {
                             return up.dot(relu.Forward(xx).col(0));
                           }, x)));

      DenseNet smooth = DenseNet::Create(3, hidden, 2, Activation::kTanh,
                                         Activation::kIdentity, rng);
      Randomize(smooth, rng, 0.8);
      const Vector tangent = RandomVector(rng, 3);
      const NetJvp j = smooth.Jvp(x, tangent, up);
      const Vector fd_input = Directional(
          [&](const Vector& xx) { return Vector(smooth.InputGrad(xx, up).col(0)); }, x, tangent);
      const Vector fd_param = Directional(
          [&](const Vector& xx) { return smooth.ParamGrad(xx, up); }, x, tangent);
      net_jvp.Add(std::max(RelErr(Vector(j.dir_input_grad.col(0)), fd_input),
                           RelErr(j.dir_param_grad, fd_param)));
    }

    // Policy.
    const int ds = 3, da = 2;
    const GaussianPolicy policy = ToyPolicy(ds, da, rng);
    Vector s = RandomVector(rng, ds);
    while (!AwayFromKinks(policy.mean_net(), s)) s = RandomVector(rng, ds);
    const Vector xi = RandomVector(rng, da);
    const Vector a = policy.Act(s, xi).col(0);
    const Vector theta = policy.Params();
    score_theta.Add(RelErr(policy.ScoreTheta(s, a), Gradient([&](const Vector& p) {
                             return policy.WithParams(p).LogProb(s, a)(0);
                           }, theta)));
    score_action.Add(RelErr(Vector(policy.ScoreAction(s, a).col(0)),
                            Gradient([&](const Vector& aa) {
                              return policy.LogProb(s, aa)(0);
                            }, a)));
    const Vector v = RandomVector(rng, da);
    reparam.Add(RelErr(policy.ReparamVjp(s, xi, v), Gradient([&](const Vector& p) {
                         return v.dot(policy.WithParams(p).Act(s, xi).col(0));
                       }, theta)));

    // Baselines.
    const BaselineKind kinds[] = {BaselineKind::kValue, BaselineKind::kLinear,
                                  BaselineKind::kQuadratic, BaselineKind::kMlp};
    for (int k = 0; k < 4; ++k) {
      const Baseline b = ToyBaseline(kinds[k], ds, da, 8, rng);
      Vector aa = a;
      for (int tries = 0; !BaselineAwayFromKinks(b, policy, s, aa) && tries < 100; ++tries)
        aa = a + RandomVector(rng, da);
      phi_grad[k].Add(RelErr(Vector(b.ActionGrad(s, aa, policy).col(0)),
                             Gradient([&](const Vector& x) {
                               return b.Phi(s, x, policy)(0);
                             }, aa)));
      if (kinds[k] == BaselineKind::kQuadratic) {
        const Matrix h = b.ActionHessian(s, aa, policy);
        Matrix fd(da, da);
        for (int c = 0; c < da; ++c) {
          fd.col(c) = Directional([&](const Vector& x) {
            return Vector(b.ActionGrad(s, x, policy).col(0));
          }, aa, Vector::Unit(da, c));
        }
        hessian.Add(RelErr(h.reshaped(), fd.reshaped()));
      }
      if (kinds[k] != BaselineKind::kValue) {
        // MinVar gradient on a small batch around this instance.
        Matrix S(ds, 3), A(da, 3);
        Vector adv(3);
        for (int t = 0; t < 3; ++t) {
          Vector st = s + 0.1 * RandomVector(rng, ds);
          Vector at = aa + 0.1 * RandomVector(rng, da);
          for (int tries = 0; tries < 100 && !(AwayFromKinks(policy.mean_net(), st) &&
                                               BaselineAwayFromKinks(b, policy, st, at));
               ++tries) {
            st = s + 0.1 * RandomVector(rng, ds);
            at = aa + 0.1 * RandomVector(rng, da);
          }
          S.col(t) = st;
          A.col(t) = at;
          adv(t) = rng.Normal();
        }
        Vector g;
        MinVarObjectiveGrad(b, policy, S, A, adv, &g);
        Baseline work = b;
        minvar.Add(RelErr(g, Gradient([&](const Vector& w) {
                            work.SetPsiParams(w);
                            return MinVarObjective(work, policy, S, A, adv);
                          }, b.PsiParams())));
      }
    }
  }
  rows.push_back(Below("fd_net_param_grad", instances, net_param.worst, 1e-5));
  rows.push_back(Below("fd_net_input_grad", instances, net_input.worst, 1e-5));
  rows.push_back(Below("fd_net_input_grad_jvp", instances, net_jvp.worst, 1e-4));
  rows.push_back(Below("fd_score_theta", instances, score_theta.worst, 1e-5));
  rows.push_back(Below("fd_score_action", instances, score_action.worst, 1e-5));
  rows.push_back(Below("fd_reparam_vjp", instances, reparam.worst, 1e-5));
  const char* names[] = {"fd_phi_action_grad_value", "fd_phi_action_grad_linear",
                         "fd_phi_action_grad_quadratic", "fd_phi_action_grad_mlp"};
  for (int k = 0; k < 4; ++k) rows.push_back(Below(names[k], instances, phi_grad[k].worst, 1e-5));
  rows.push_back(Below("fd_phi_action_hessian_quadratic", instances, hessian.worst, 1e-5));
  rows.push_back(Below("fd_minvar_objective_grad", instances, minvar.worst, 1e-4));
}

// --- Stein identity ----------------------------------------------------------

void ResidualChecks(const ExperimentConfig& config, const Rng& root,
                    const ReparamFn& reparam, std::vector<CheckRow>& rows) {
  const std::vector<int>& sizes = config.check.residual_sizes;
  const int n_max = *std::max_element(sizes.begin(), sizes.end());
  for (int da : {1, 2}) {
    Rng rng = root.Child({2, static_cast<std::uint64_t>(da)});
    const int ds = 3;
    const int hidden[] = {16};
    GaussianPolicy policy = GaussianPolicy::Create(ds, da, hidden, 0.0, rng);
    BaselineSpec spec;
    spec.kind = BaselineKind::kMlp;
    spec.value_hidden = config.value_hidden;
    spec.psi_hidden = config.psi_hidden;
    const Baseline b = Baseline::Create(spec, ds, da, rng);
    const Vector s = rng.NormalVector(ds);
    std::vector<double> log_n, log_r;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const int n = sizes[k];
      Rng draw = rng.Child({static_cast<std::uint64_t>(n)});
      const double r = SteinIdentityResidual(policy, b, s, n, draw, reparam);
      const double threshold =
          config.check.residual_threshold * std::sqrt(static_cast<double>(n_max) / n);
      rows.push_back(Below("stein_residual_mlp_da" + std::to_string(da), n, r, threshold));
      log_n.push_back(std::log(static_cast<double>(n)));
      log_r.push_back(std::log(r));
    }
    if (sizes.size() >= 2) {
      const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / log_n.size();
      const double my = std::accumulate(log_r.begin(), log_r.end(), 0.0) / log_r.size();
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t k = 0; k < log_n.size(); ++k) {
        sxy += (log_n[k] - mx) * (log_r[k] - my);
        sxx += (log_n[k] - mx) * (log_n[k] - mx);
      }
      const double slope = sxy / sxx;
      // Slope must lie in [-0.65, -0.35].
      rows.push_back(Row("stein_residual_slope_offset_da" + std::to_string(da), n_max,
                         std::abs(slope + 0.5), 0.15,
                         std::isfinite(slope) && std::abs(slope + 0.5) <= 0.15));
    }
  }
  // Constant phi: both sides vanish in expectation.
  {
    Rng rng = root.Child({3});
    const int hidden[] = {16};
    GaussianPolicy policy = GaussianPolicy::Create(3, 2, hidden, 0.0, rng);
    BaselineSpec spec;
    spec.value_hidden = config.value_hidden;
    const Baseline b = Baseline::Create(spec, 3, 2, rng);
    const Vector s = rng.NormalVector(3);
    Rng draw = rng.Child({4});
    const int n = 10000;
    rows.push_back(Below("stein_residual_constant_phi", n,
                         SteinIdentityResidual(policy, b, s, n, draw, reparam), 0.05));
  }
}

// --- estimator reductions ----------------------------------------------------

Batch RandomBatch(const GaussianPolicy& policy, int n, Rng& rng) {
  Matrix states(policy.state_dim(), n), noises(policy.action_dim(), n);
  for (int t = 0; t < n; ++t) {
    states.col(t) = rng.NormalVector(policy.state_dim());
    noises.col(t) = rng.NormalVector(policy.action_dim());
  }
  Vector values(n), q(n);
  for (int t = 0; t < n; ++t) {
    values(t) = rng.Normal();
    q(t) = values(t) + rng.Normal();
  }
  return BatchFromQ(states, policy.Act(states, noises), noises, q, values, false);
}

void ReductionChecks(const ExperimentConfig& config, const Rng& root,
                     std::vector<CheckRow>& rows) {
  Rng rng = root.Child({5});
  const int n = config.check.batch_size;
  const GaussianPolicy policy = ToyPolicy(3, 2, rng);
  const Batch batch = RandomBatch(policy, n, rng);
  const int pm = policy.num_mean_params();

  const Baseline value = ToyBaseline(BaselineKind::kValue, 3, 2, 8, rng);
  const Vector a2c = GradValueBaseline(batch, policy).values;
  rows.push_back(Exact("reduction_value_eq15_equals_a2c", n,
                       GradStein(batch, policy, value, SigmaFormula::kEq15).values, a2c));
  rows.push_back(Exact("reduction_value_eq16_equals_a2c", n,
                       GradStein(batch, policy, value, SigmaFormula::kEq16).values, a2c));

  const Baseline linear = ToyBaseline(BaselineKind::kLinear, 3, 2, 8, rng);
  const Vector qprop = GradQpropForm(batch, policy, linear).values.head(pm);
  rows.push_back(Exact("reduction_linear_eq15_mean_equals_qprop", n,
                       GradStein(batch, policy, linear, SigmaFormula::kEq15).values.head(pm),
                       qprop));
  rows.push_back(Exact("reduction_linear_eq16_mean_equals_qprop", n,
                       GradStein(batch, policy, linear, SigmaFormula::kEq16).values.head(pm),
                       qprop));
  const SteinTerms terms = SteinTermsFor(batch, policy, linear, SigmaFormula::kEq16);
  rows.push_back(Exact("reduction_linear_eq16_sigma_term_zero", n,
                       terms.sigma_term.reshaped(),
                       Vector::Zero(terms.sigma_term.size())));

  for (BaselineKind kind : {BaselineKind::kQuadratic, BaselineKind::kMlp}) {
    const Baseline b = ToyBaseline(kind, 3, 2, 8, rng);
    Batch zero = batch;
    zero.adv = b.Psi(zero.states, zero.actions, policy);
    const Vector stein = GradStein(zero, policy, b, SigmaFormula::kEq15).values.head(pm);
    const Vector path = GradReparam(zero, policy, b).values.head(pm);
    rows.push_back(Exact(std::string("reduction_zero_residual_reparam_") + BaselineKindName(kind),
                         n, stein, path));
  }
}

// --- eq15 versus eq16 ------------------------------------------------------------

void FormulaChecks(const ExperimentConfig& config, const Rng& root,
                   std::vector<CheckRow>& rows) {
  Rng rng = root.Child({6});
  const EnvModel& env = config.env;
  const GaussianPolicy policy = GaussianPolicy::Create(
      env.state_dim(), env.action_dim(), config.policy_hidden, config.log_std_init, rng);
  BaselineSpec spec;
  spec.kind = BaselineKind::kQuadratic;
  spec.value_hidden = config.value_hidden;
  spec.psi_hidden = config.psi_hidden;
  Baseline b = Baseline::Create(spec, env.state_dim(), env.action_dim(), rng);
  const ValueFn value_fn = [&](const MatrixRef& s) { return b.Value(s); };
  // V and psi fitted on a hold-out batch.
  {
    const std::vector<Trajectory> trajs = CollectSteps(env, policy, 4000, rng.Child({1u << 20}));
    FitOptions fit;
    fit.steps = config.fit_steps;
    fit.lr = config.fit_lr;
    fit.batch_size = 256;
    const Batch first = BuildBatch(trajs, value_fn, config.advantage);
    FitValue(b, first.states, first.q_hat, fit);
    const Batch second = BuildBatch(trajs, value_fn, config.advantage);
    FitQ(b, policy, second.states, second.actions, second.adv, fit);
  }
  const int B = config.check.batches;
  std::vector<Vector> e15(B), e16(B);
  for (int k = 0; k < B; ++k) {
    const Batch batch = BuildBatch(
        CollectSteps(env, policy, config.check.batch_size,
                     rng.Child({static_cast<std::uint64_t>(k)})),
        value_fn, config.advantage);
    e15[k] = GradStein(batch, policy, b, SigmaFormula::kEq15).values;
    e16[k] = GradStein(batch, policy, b, SigmaFormula::kEq16).values;
  }
  const int p = policy.num_params();
  const int da = policy.action_dim();
  double worst_z = 0.0;
  for (int i = 0; i < p; ++i) {
    double mean = 0.0;
    for (int k = 0; k < B; ++k) mean += e15[k](i) - e16[k](i);
    mean /= B;
    double var = 0.0;
    for (int k = 0; k < B; ++k) {
      const double d = e15[k](i) - e16[k](i) - mean;
      var += d * d;
    }
    const double se = std::sqrt(var / (B - 1) / B);
    if (se > 0.0) worst_z = std::max(worst_z, std::abs(mean) / se);
    else if (mean != 0.0) worst_z = INFINITY;
  }
  rows.push_back(Row("eq15_eq16_mean_agreement_z", B, worst_z, 3.0, worst_z <= 3.0));
  const VarianceSummary v15 = EstimatorVariance(e15);
  const VarianceSummary v16 = EstimatorVariance(e16);
  const double ratio = v16.per_coord.tail(da).sum() / v15.per_coord.tail(da).sum();
  rows.push_back(Row("eq16_over_eq15_sigma_block_variance", B, ratio, 1.0, ratio <= 1.0));
}

}  // namespace

std::vector<CheckRow> IdentityChecks(const ExperimentConfig& config, CheckGroup group,
                                     const ReparamFn& reparam) {
  const Rng root(config.seed, 0x636865636bULL);
  std::vector<CheckRow> rows;
  switch (group) {
    case CheckGroup::kResidual: ResidualChecks(config, root, reparam, rows); break;
    case CheckGroup::kReduction: ReductionChecks(config, root, rows); break;
    case CheckGroup::kFormula: FormulaChecks(config, root, rows); break;
    case CheckGroup::kDerivative: DerivativeChecks(config, root, rows); break;
  }
  return rows;
}

std::vector<CheckRow> IdentityChecks(const ExperimentConfig& config,
                                     const ReparamFn& reparam) {
  std::vector<CheckRow> rows;
  for (CheckGroup g : {CheckGroup::kResidual, CheckGroup::kReduction, CheckGroup::kFormula,
                       CheckGroup::kDerivative}) {
    std::vector<CheckRow> part = IdentityChecks(config, g, reparam);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

}  // namespace steincv
