#ifndef STEIN_CV_HARNESS_HPP_
#define STEIN_CV_HARNESS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "stein_cv/config.hpp"
#include "stein_cv/estimator.hpp"

namespace steincv {

struct CsvReport {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string config_hash;
  std::uint64_t seed = 0;
  bool all_passed = true;

  // Header, rows, then "# config_hash=<hex> seed=<u64>".
  std::string Text() const;
  void Write(const std::string& path) const;
};

// "-inf" for -infinity, otherwise %.17g.
std::string FormatMetric(double x);

GradientEstimate EstimateFor(const MethodSpec& method, const Batch& batch,
                             const GaussianPolicy& policy, const Baseline& baseline);

// Freezes a PPO+Value policy, fits every configured baseline on a hold-out
// batch, then measures log trace-variance across independent batches for each
// sample size.
CsvReport RunVarianceEval(const ExperimentConfig& config);

// One training run per (method, seed); a row per iteration.
CsvReport RunTraining(const ExperimentConfig& config);

struct CheckRow {
  std::string name;
  long n = 0;
  double residual = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Numerical verification of Stein's identity, the estimator reductions and
// the analytic derivatives. `reparam` replaces the reparameterization product
// in the identity rows (for mutation testing).
std::vector<CheckRow> IdentityChecks(const ExperimentConfig& config,
                                     const ReparamFn& reparam = nullptr);

// One group of the rows above, in the same order.
enum class CheckGroup { kResidual, kReduction, kFormula, kDerivative };
std::vector<CheckRow> IdentityChecks(const ExperimentConfig& config, CheckGroup group,
                                     const ReparamFn& reparam = nullptr);
CsvReport RunIdentityChecks(const ExperimentConfig& config,
                            const ReparamFn& reparam = nullptr);

CsvReport RunExperiment(const ExperimentConfig& config);

}  // namespace steincv

#endif  // STEIN_CV_HARNESS_HPP_
