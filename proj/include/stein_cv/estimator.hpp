#ifndef STEIN_CV_ESTIMATOR_HPP_
#define STEIN_CV_ESTIMATOR_HPP_

#include <functional>
#include <string>
#include <vector>

#include "stein_cv/diffnet.hpp"

namespace steincv {

class Baseline;
class GaussianPolicy;
class Rng;
struct Trajectory;

// Discounted return-to-go, no bootstrap.
Vector McReturns(const Trajectory& traj, double gamma);

// Generalized advantage estimates. `values` holds V(s_t) for every step and
// `final_value` the value of the state after the last step; it is ignored
// (taken as 0) for terminal trajectories.
Vector Gae(const Trajectory& traj, const VectorRef& values, double final_value,
           double gamma, double lambda);

using ValueFn = std::function<Vector(const MatrixRef& states)>;
Vector Gae(const Trajectory& traj, const ValueFn& value_fn, double gamma,
           double lambda);

// Flattened step view of a set of trajectories. `adv` is what the estimators
// consume (normalized when requested); `q_hat` is always adv_raw + values.
struct Batch {
  Matrix states, actions, noises;
  Vector rewards;
  Vector values;
  Vector adv_raw;
  Vector adv;
  Vector q_hat;
  double adv_mean = 0.0;
  double adv_std = 1.0;
  bool normalized = false;

  int size() const { return static_cast<int>(states.cols()); }
};

struct AdvantageOptions {
  double gamma = 0.995;
  double lambda = 0.98;
  bool normalize = false;
};

Batch BuildBatch(const std::vector<Trajectory>& trajs, const ValueFn& value_fn,
                 const AdvantageOptions& options);
// Batch from explicit per-step action-value estimates.
Batch BatchFromQ(const Matrix& states, const Matrix& actions, const Matrix& noises,
                 const Vector& q_hat, const Vector& values, bool normalize);
// Column subset (indices in order).
Batch SubBatch(const Batch& batch, const std::vector<int>& idx);

enum class SigmaFormula { kEq15, kEq16 };
const char* SigmaFormulaName(SigmaFormula f);
SigmaFormula ParseSigmaFormula(const std::string& name);

struct GradientEstimate {
  Vector values;
  int n_samples = 0;
  std::string estimator;
  std::string formula;  // "eq15", "eq16", or empty
};

// Per-sample pieces of a Stein-type estimator; every estimator below is
// (1/n) sum_t w_t [score_theta_t rho_t + mean path through v_t + extra_t],
// where extra_t only touches the log_std block.
struct SteinTerms {
  Vector rho;         // n
  Matrix v;           // d_a x n, may be empty (zero)
  Matrix sigma_term;  // d_a x n, may be empty (zero)
  Vector weights;     // n, may be empty (all ones)
};
Vector SteinSum(const GaussianPolicy& policy, const MatrixRef& states,
                const MatrixRef& actions, const SteinTerms& terms);

GradientEstimate GradVanilla(const Batch& batch, const GaussianPolicy& policy);
GradientEstimate GradValueBaseline(const Batch& batch, const GaussianPolicy& policy);
// `basis` is the policy that defines the Linear kind's Taylor point; it
// defaults to `policy`.
SteinTerms SteinTermsFor(const Batch& batch, const GaussianPolicy& policy,
                         const Baseline& baseline, SigmaFormula formula,
                         const GaussianPolicy* basis = nullptr);
GradientEstimate GradStein(const Batch& batch, const GaussianPolicy& policy,
                           const Baseline& baseline, SigmaFormula formula);
GradientEstimate GradReparam(const Batch& batch, const GaussianPolicy& policy,
                             const Baseline& baseline);
GradientEstimate GradQpropForm(const Batch& batch, const GaussianPolicy& policy,
                               const Baseline& linear_baseline);

// Hook for swapping the reparameterization product in the identity check.
using ReparamFn = std::function<Vector(const GaussianPolicy&, const MatrixRef& states,
                                       const MatrixRef& noises, const MatrixRef& v)>;

// |LHS - RHS| / |RHS| for the n-sample estimates of
//   E[grad_theta log pi(a|s) phi(s, a)]  and  E[grad_theta f(s, xi) grad_a phi(s, a)]
// at a fixed state. When the RHS estimate is exactly zero the root mean
// square of the per-sample LHS terms is used as the scale instead.
double SteinIdentityResidual(const GaussianPolicy& policy, const Baseline& baseline,
                             const VectorRef& state, int n, Rng& rng,
                             const ReparamFn& reparam = nullptr);

struct VarianceSummary {
  Vector per_coord;
  double trace = 0.0;
  double log_trace = 0.0;  // -inf when trace == 0
};
VarianceSummary EstimatorVariance(const std::vector<Vector>& estimates);

}  // namespace steincv

#endif  // STEIN_CV_ESTIMATOR_HPP_
