#ifndef STEIN_CV_PPO_HPP_
#define STEIN_CV_PPO_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stein_cv/baseline.hpp"
#include "stein_cv/envs.hpp"
#include "stein_cv/estimator.hpp"
#include "stein_cv/optim.hpp"
#include "stein_cv/policy.hpp"

namespace steincv {

class Rng;

enum class EstimatorKind { kVanilla, kValue, kStein, kQprop, kReparam };
enum class FitMethod { kNone, kFitQ, kMinVar };
enum class FitOn { kCurrent, kPrevious };

const char* FitMethodName(FitMethod m);

// One estimator configuration, e.g. Stein with an MLP psi fitted by MinVar.
struct MethodSpec {
  EstimatorKind estimator = EstimatorKind::kValue;
  BaselineKind baseline = BaselineKind::kValue;
  FitMethod fit = FitMethod::kNone;
  SigmaFormula formula = SigmaFormula::kEq15;

  // "Value", "Vanilla", "MinVar+MLP", "FitQ+Quadratic", "QProp+FitQ", ...
  std::string Label() const;
  // Grammar: vanilla | value | a2c | stein:<kind>:<fit>[:<eq15|eq16>]
  //          | qprop:linear:<fit> | reparam:<kind>:<fit>
  std::string Render() const;
  static MethodSpec Parse(const std::string& text);
  bool operator==(const MethodSpec&) const = default;
};

struct PpoConstants {
  int steps_per_iter = 2000;
  int policy_steps = 10;
  int baseline_steps = 500;
  int value_steps = 500;
  int baseline_batch = 0;  // 0: full batch
  int value_batch = 0;
  double policy_lr = 3e-4;
  double baseline_lr = 1e-3;
  double value_lr = 1e-3;
  double kl_target = 0.01;
  double alpha = 2.0;
  double beta_high = 1.5;
  double beta_low = 1.0 / 1.5;
  double lambda_init = 1.0;
  double lambda_min = 1e-4;
  double lambda_max = 1e4;
  bool operator==(const PpoConstants&) const = default;
};

struct TrainOptions {
  EnvModel env;
  std::vector<int> policy_hidden;
  double log_std_init = 0.0;
  BaselineSpec baseline;  // kind is overridden by the method
  MethodSpec method;
  PpoConstants ppo;
  AdvantageOptions advantage;
  FitOn fit_on = FitOn::kCurrent;
  int iterations = 0;
  std::uint64_t seed = 0;
  Matrix eval_starts;  // start states for the deterministic return
};

struct PpoState {
  GaussianPolicy policy;
  GaussianPolicy old_policy;
  Baseline baseline;
  double lambda_kl = 1.0;
  int iteration = 0;
  long env_steps = 0;
  std::optional<Adam> optimizer;
  std::optional<Batch> previous_batch;
};

struct IterationStats {
  int iteration = 0;
  long env_steps = 0;
  double mean_return = 0.0;    // deterministic return after the update
  double sample_return = 0.0;  // mean undiscounted episode sum in the batch
  double kl = 0.0;
  double lambda_kl = 0.0;
  double baseline_before = 0.0;
  double baseline_after = 0.0;
  double grad_norm = 0.0;
  bool operator==(const IterationStats&) const = default;
};

struct LearningCurve {
  std::vector<IterationStats> rows;
  GaussianPolicy policy;
  Baseline baseline;
};

// lambda * alpha above beta_high * target, lambda / alpha below
// beta_low * target; no clamping.
double AdaptKlCoeff(double lambda, double measured_kl, double kl_target,
                    double alpha, double beta_high, double beta_low);

// Ascent direction of the KL-penalized surrogate at `policy`, with baseline
// quantities taken at `old_policy`.
GradientEstimate PpoSurrogateGrad(const Batch& batch, const GaussianPolicy& policy,
                                  const GaussianPolicy& old_policy,
                                  const Baseline& baseline, double lambda_kl,
                                  const MethodSpec& method);

PpoState InitPpo(const TrainOptions& options);
// Seeds for the iteration come from rng.Child({iteration}).
IterationStats PpoIteration(PpoState& state, const TrainOptions& options,
                            const Rng& rng);
LearningCurve Train(const TrainOptions& options);

// Fits psi on a batch as the method prescribes; returns the objective before
// and after.
FitReport FitPsiFor(Baseline& baseline, const GaussianPolicy& policy,
                    const Batch& batch, FitMethod method, const FitOptions& options);

}  // namespace steincv

#endif  // STEIN_CV_PPO_HPP_
