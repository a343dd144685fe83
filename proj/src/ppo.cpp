#include "stein_cv/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

std::vector<std::string> Split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

FitMethod ParseFit(const std::string& s) {
  if (s == "fitq") return FitMethod::kFitQ;
  if (s == "minvar") return FitMethod::kMinVar;
  if (s == "none") return FitMethod::kNone;
  Throw(ErrorCode::kConfig, "unknown fit method '" + s + "'");
}

const char* KindLabel(BaselineKind k) {
  switch (k) {
    case BaselineKind::kValue: return "Value";
    case BaselineKind::kLinear: return "Linear";
    case BaselineKind::kQuadratic: return "Quadratic";
    case BaselineKind::kMlp: return "MLP";
  }
  return "Value";
}

const char* FitLabel(FitMethod m) {
  switch (m) {
    case FitMethod::kNone: return "None";
    case FitMethod::kFitQ: return "FitQ";
    case FitMethod::kMinVar: return "MinVar";
  }
  return "None";
}

SigmaFormula DefaultFormula(BaselineKind k) {
  return k == BaselineKind::kMlp ? SigmaFormula::kEq15 : SigmaFormula::kEq16;
}

}  // namespace

const char* FitMethodName(FitMethod m) {
  switch (m) {
    case FitMethod::kNone: return "none";
    case FitMethod::kFitQ: return "fitq";
    case FitMethod::kMinVar: return "minvar";
  }
  return "none";
}

std::string MethodSpec::Label() const {
  switch (estimator) {
    case EstimatorKind::kVanilla: return "Vanilla";
    case EstimatorKind::kValue: return "Value";
    case EstimatorKind::kQprop: return std::string("QProp+") + FitLabel(fit);
    case EstimatorKind::kReparam:
      return std::string("Reparam+") + FitLabel(fit) + "+" + KindLabel(baseline);
    case EstimatorKind::kStein: {
      std::string label = std::string(FitLabel(fit)) + "+" + KindLabel(baseline);
      if (formula != DefaultFormula(baseline)) label += std::string("+") + SigmaFormulaName(formula);
      return label;
    }
  }
  return "Value";
}

std::string MethodSpec::Render() const {
  switch (estimator) {
    case EstimatorKind::kVanilla: return "vanilla";
    case EstimatorKind::kValue: return "value";
    case EstimatorKind::kQprop: return std::string("qprop:linear:") + FitMethodName(fit);
    case EstimatorKind::kReparam:
      return std::string("reparam:") + BaselineKindName(baseline) + ":" + FitMethodName(fit);
    case EstimatorKind::kStein:
      return std::string("stein:") + BaselineKindName(baseline) + ":" +
             FitMethodName(fit) + ":" + SigmaFormulaName(formula);
  }
  return "value";
}

MethodSpec MethodSpec::Parse(const std::string& text) {
  const std::vector<std::string> parts = Split(text, ':');
  Require(!parts.empty(), ErrorCode::kConfig, "empty method");
  MethodSpec m;
  const std::string& head = parts[0];
  if (head == "vanilla" || head == "value" || head == "a2c") {
    Require(parts.size() == 1, ErrorCode::kConfig, "method '" + text + "' takes no options");
    m.estimator = head == "vanilla" ? EstimatorKind::kVanilla : EstimatorKind::kValue;
    return m;
  }
  if (head == "stein" || head == "qprop" || head == "reparam") {
    Require(parts.size() >= 3 && parts.size() <= 4, ErrorCode::kConfig,
            "method '" + text + "' must look like " + head + ":<baseline>:<fit>");
    m.baseline = ParseBaselineKind(parts[1]);
    m.fit = ParseFit(parts[2]);
    m.formula = DefaultFormula(m.baseline);
    if (parts.size() == 4) m.formula = ParseSigmaFormula(parts[3]);
    if (head == "stein") {
      m.estimator = EstimatorKind::kStein;
      Require(!(m.baseline == BaselineKind::kMlp && m.formula == SigmaFormula::kEq16),
              ErrorCode::kConfig, "method '" + text + "': eq16 is unsupported for mlp");
    } else if (head == "qprop") {
      m.estimator = EstimatorKind::kQprop;
      Require(m.baseline == BaselineKind::kLinear && parts.size() == 3,
              ErrorCode::kConfig, "qprop takes the form qprop:linear:<fit>");
      m.formula = SigmaFormula::kEq16;
    } else {
      m.estimator = EstimatorKind::kReparam;
      Require(parts.size() == 3, ErrorCode::kConfig,
              "reparam takes the form reparam:<baseline>:<fit>");
      m.formula = DefaultFormula(m.baseline);
    }
    Require(m.baseline == BaselineKind::kValue || m.fit != FitMethod::kNone,
            ErrorCode::kConfig, "method '" + text + "' needs a fit method");
    return m;
  }
  Throw(ErrorCode::kConfig, "unknown method '" + text + "'");
}

double AdaptKlCoeff(double lambda, double measured_kl, double kl_target,
                    double alpha, double beta_high, double beta_low) {
  if (measured_kl > beta_high * kl_target) return alpha * lambda;
  if (measured_kl < beta_low * kl_target) return lambda / alpha;
  return lambda;
}

GradientEstimate PpoSurrogateGrad(const Batch& batch, const GaussianPolicy& policy,
                                  const GaussianPolicy& old_policy,
                                  const Baseline& baseline, double lambda_kl,
                                  const MethodSpec& method) {
  const int n = batch.size();
  Require(n > 0, ErrorCode::kInvalidArgument, "surrogate gradient needs samples");
  SteinTerms terms;
  switch (method.estimator) {
    case EstimatorKind::kVanilla: terms.rho = batch.q_hat; break;
    case EstimatorKind::kValue: terms.rho = batch.adv; break;
    case EstimatorKind::kStein:
      terms = SteinTermsFor(batch, policy, baseline, method.formula, &old_policy);
      break;
    case EstimatorKind::kQprop:
      Require(baseline.kind() == BaselineKind::kLinear, ErrorCode::kUnsupported,
              "the Q-prop form needs a linear baseline");
      terms = SteinTermsFor(batch, policy, baseline, SigmaFormula::kEq16, &old_policy);
      break;
    case EstimatorKind::kReparam:
      Throw(ErrorCode::kUnsupported, "the reparameterized estimator is not a PPO method");
  }
  terms.weights = (policy.LogProb(batch.states, batch.actions) -
                   old_policy.LogProb(batch.states, batch.actions))
                      .array()
                      .exp()
                      .matrix();
  for (int t = 0; t < n; ++t) {
    if (!std::isfinite(terms.weights(t))) {
      Throw(ErrorCode::kNumeric,
            "non-finite importance ratio at sample " + std::to_string(t));
    }
  }
  GradientEstimate g;
  g.values = SteinSum(policy, batch.states, batch.actions, terms) / static_cast<double>(n);
  g.values -= lambda_kl * KlMeanGrad(old_policy, policy, batch.states);
  g.n_samples = n;
  g.estimator = "ppo";
  g.formula = method.estimator == EstimatorKind::kStein ? SigmaFormulaName(method.formula) : "";
  Require(g.values.allFinite(), ErrorCode::kNumeric, "non-finite surrogate gradient");
  return g;
}

FitReport FitPsiFor(Baseline& baseline, const GaussianPolicy& policy,
                    const Batch& batch, FitMethod method, const FitOptions& options) {
  switch (method) {
    case FitMethod::kNone: {
      FitReport r;
      r.noop = true;
      return r;
    }
    case FitMethod::kFitQ:
      return FitQ(baseline, policy, batch.states, batch.actions, batch.adv, options);
    case FitMethod::kMinVar:
      return MinVarFit(baseline, policy, batch.states, batch.actions, batch.adv, options);
  }
  return FitReport();
}

PpoState InitPpo(const TrainOptions& options) {
  options.env.Validate();
  Rng root(options.seed);
  Rng policy_rng = root.Child({1});
  Rng baseline_rng = root.Child({2});
  PpoState state;
  state.policy = GaussianPolicy::Create(options.env.state_dim(), options.env.action_dim(),
                                        options.policy_hidden, options.log_std_init,
                                        policy_rng);
  state.old_policy = state.policy;
  BaselineSpec spec = options.baseline;
  spec.kind = options.method.baseline;
  state.baseline = Baseline::Create(spec, options.env.state_dim(),
                                    options.env.action_dim(), baseline_rng);
  state.lambda_kl = options.ppo.lambda_init;
  return state;
}

namespace {

double SampleReturn(const std::vector<Trajectory>& trajs, int horizon) {
  double full = 0.0, all = 0.0;
  int n_full = 0;
  for (const Trajectory& t : trajs) {
    const double r = t.rewards.sum();
    all += r;
    if (t.length() == horizon || t.terminal) {
      full += r;
      ++n_full;
    }
  }
  return n_full > 0 ? full / n_full : all / static_cast<double>(trajs.size());
}

}  // namespace

IterationStats PpoIteration(PpoState& state, const TrainOptions& options,
                            const Rng& rng) {
  const PpoConstants& c = options.ppo;
  const Rng it_rng = rng.Child({static_cast<std::uint64_t>(state.iteration)});
  IterationStats stats;
  stats.iteration = state.iteration;

  state.old_policy = state.policy;
  const std::vector<Trajectory> trajs =
      CollectSteps(options.env, state.policy, c.steps_per_iter, it_rng.Child({0}));
  state.env_steps += c.steps_per_iter;
  stats.sample_return = SampleReturn(trajs, options.env.horizon);

  const Baseline& value_source = state.baseline;
  const Batch batch = BuildBatch(
      trajs, [&](const MatrixRef& s) { return value_source.Value(s); }, options.advantage);

  // Baseline update.
  const bool fits_psi = options.method.fit != FitMethod::kNone &&
                        options.method.baseline != BaselineKind::kValue &&
                        (options.method.estimator == EstimatorKind::kStein ||
                         options.method.estimator == EstimatorKind::kQprop);
  if (fits_psi && c.baseline_steps > 0) {
    FitOptions fit;
    fit.steps = c.baseline_steps;
    fit.lr = c.baseline_lr;
    fit.batch_size = c.baseline_batch;
    fit.seed = it_rng.Child({1}).NextU64();
    const Batch* data = &batch;
    if (options.fit_on == FitOn::kPrevious) data = state.previous_batch ? &*state.previous_batch : nullptr;
    if (data) {
      const FitReport r = FitPsiFor(state.baseline, state.old_policy, *data,
                                    options.method.fit, fit);
      stats.baseline_before = r.objective_before;
      stats.baseline_after = r.objective_after;
    }
  }

  // Policy update.
  if (!state.optimizer) state.optimizer.emplace(state.policy.num_params(), c.policy_lr);
  for (int step = 0; step < c.policy_steps; ++step) {
    const GradientEstimate g = PpoSurrogateGrad(batch, state.policy, state.old_policy,
                                                state.baseline, state.lambda_kl,
                                                options.method);
    if (step == 0) stats.grad_norm = g.values.norm();
    state.policy.SetParams(state.optimizer->Step(state.policy.Params(), -g.values));
  }

  stats.kl = KlMean(state.old_policy, state.policy, batch.states);
  state.lambda_kl = std::clamp(
      AdaptKlCoeff(state.lambda_kl, stats.kl, c.kl_target, c.alpha, c.beta_high, c.beta_low),
      c.lambda_min, c.lambda_max);
  stats.lambda_kl = state.lambda_kl;

  // Value refit for the next iteration's advantages.
  if (c.value_steps > 0) {
    FitOptions fit;
    fit.steps = c.value_steps;
    fit.lr = c.value_lr;
    fit.batch_size = c.value_batch;
    fit.seed = it_rng.Child({2}).NextU64();
    FitValue(state.baseline, batch.states, batch.q_hat, fit);
  }
  if (options.fit_on == FitOn::kPrevious) state.previous_batch = batch;

  Require(std::isfinite(stats.sample_return) && std::isfinite(stats.kl),
          ErrorCode::kNumeric,
          "non-finite training statistics at iteration " + std::to_string(state.iteration));
  stats.mean_return = options.eval_starts.size() > 0
                          ? DeterministicReturn(options.env, state.policy, options.eval_starts)
                          : stats.sample_return;
  stats.env_steps = state.env_steps;
  ++state.iteration;
  return stats;
}

LearningCurve Train(const TrainOptions& options) {
  PpoState state = InitPpo(options);
  const Rng rng = Rng(options.seed).Child({3});
  LearningCurve curve;
  for (int i = 0; i < options.iterations; ++i)
    curve.rows.push_back(PpoIteration(state, options, rng));
  curve.policy = state.policy;
  curve.baseline = state.baseline;
  return curve;
}

}  // namespace steincv
