#include "stein_cv/harness.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

// Runs fn(0..n-1) on up to `threads` workers. The first exception is rethrown.
void ParallelFor(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::string FormatMetric(double x) {
  if (std::isinf(x) && x < 0) return "-inf";
  return FormatDouble(x);
}

std::string CsvReport::Text() const {
  std::ostringstream o;
  for (std::size_t i = 0; i < header.size(); ++i) o << (i ? "," : "") << header[i];
  o << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) o << (i ? "," : "") << row[i];
    o << "\n";
  }
  o << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  return o.str();
}

void CsvReport::Write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path + "'");
  out << Text();
  Require(static_cast<bool>(out), ErrorCode::kIo, "write to '" + path + "' failed");
}

GradientEstimate EstimateFor(const MethodSpec& method, const Batch& batch,
                             const GaussianPolicy& policy, const Baseline& baseline) {
  switch (method.estimator) {
    case EstimatorKind::kVanilla: return GradVanilla(batch, policy);
    case EstimatorKind::kValue: return GradValueBaseline(batch, policy);
    case EstimatorKind::kStein: return GradStein(batch, policy, baseline, method.formula);
    case EstimatorKind::kQprop: return GradQpropForm(batch, policy, baseline);
    case EstimatorKind::kReparam: return GradReparam(batch, policy, baseline);
  }
  return GradientEstimate();
}

CsvReport RunVarianceEval(const ExperimentConfig& config) {
  CsvReport report;
  report.header = {"estimator", "fit_method", "n", "log_variance", "seed"};
  report.config_hash = config.Hash();
  report.seed = config.seed;
  const Rng root(config.seed);

  // Frozen policy and value function.
  MethodSpec value_method;
  TrainOptions train = config.TrainOptionsFor(value_method, config.seed);
  train.iterations = config.variance.freeze_iterations;
  const LearningCurve frozen = Train(train);
  const GaussianPolicy& policy = frozen.policy;
  const Baseline& value_baseline = frozen.baseline;
  const ValueFn value_fn = [&](const MatrixRef& s) { return value_baseline.Value(s); };

  // Baselines fitted on a hold-out batch.
  const Batch holdout = BuildBatch(
      CollectSteps(config.env, policy, config.variance.holdout_steps, root.Child({10})),
      value_fn, config.advantage);
  const int n_methods = static_cast<int>(config.methods.size());
  std::vector<Baseline> baselines(n_methods);
  ParallelFor(n_methods, config.threads, [&](int k) {
    const MethodSpec& m = config.methods[k];
    BaselineSpec spec;
    spec.kind = m.baseline;
    spec.value_hidden = config.value_hidden;
    spec.psi_hidden = config.psi_hidden;
    Rng init = root.Child({11, static_cast<std::uint64_t>(k)});
    Baseline b = Baseline::Create(spec, config.env.state_dim(), config.env.action_dim(), init);
    b.CopyValueFrom(value_baseline);
    FitOptions fit;
    fit.steps = config.fit_steps;
    fit.lr = config.fit_lr;
    fit.batch_size = config.fit_batch;
    fit.seed = root.Child({12, static_cast<std::uint64_t>(k)}).NextU64();
    FitPsiFor(b, policy, holdout, m.fit, fit);
    baselines[k] = std::move(b);
  });

  // Independent batches shared by all estimators at a given n.
  const int B = config.variance.batches;
  for (int n : config.variance.sample_sizes) {
    std::vector<std::vector<Vector>> estimates(n_methods, std::vector<Vector>(B));
    ParallelFor(B, config.threads, [&](int b) {
      const Rng batch_rng =
          root.Child({20, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(b)});
      const Batch batch =
          BuildBatch(CollectSteps(config.env, policy, n, batch_rng), value_fn, config.advantage);
      for (int k = 0; k < n_methods; ++k)
        estimates[k][b] = EstimateFor(config.methods[k], batch, policy, baselines[k]).values;
    });
    for (int k = 0; k < n_methods; ++k) {
      const VarianceSummary v = EstimatorVariance(estimates[k]);
      report.rows.push_back({config.methods[k].Label(), FitMethodName(config.methods[k].fit),
                             std::to_string(n), FormatMetric(v.log_trace),
                             std::to_string(config.seed)});
    }
  }
  return report;
}

CsvReport RunTraining(const ExperimentConfig& config) {
  CsvReport report;
  report.header = {"method", "seed", "env_steps", "mean_return"};
  report.config_hash = config.Hash();
  report.seed = config.seed;
  const int n_methods = static_cast<int>(config.methods.size());
  const int n_seeds = static_cast<int>(config.seeds.size());
  std::vector<LearningCurve> curves(n_methods * n_seeds);
  ParallelFor(n_methods * n_seeds, config.threads, [&](int cell) {
    const MethodSpec& m = config.methods[cell / n_seeds];
    const std::uint64_t s = config.seeds[cell % n_seeds];
    curves[cell] = Train(config.TrainOptionsFor(m, s));
  });
  for (int cell = 0; cell < n_methods * n_seeds; ++cell) {
    const std::string label = config.methods[cell / n_seeds].Label();
    const std::string seed = std::to_string(config.seeds[cell % n_seeds]);
    for (const IterationStats& row : curves[cell].rows)
      report.rows.push_back(
          {label, seed, std::to_string(row.env_steps), FormatMetric(row.mean_return)});
  }
  return report;
}

CsvReport RunIdentityChecks(const ExperimentConfig& config, const ReparamFn& reparam) {
  CsvReport report;
  report.header = {"check", "n", "residual", "threshold", "pass"};
  report.config_hash = config.Hash();
  report.seed = config.seed;
  for (const CheckRow& row : IdentityChecks(config, reparam)) {
    report.rows.push_back({row.name, std::to_string(row.n), FormatMetric(row.residual),
                           FormatMetric(row.threshold), row.pass ? "pass" : "fail"});
    report.all_passed = report.all_passed && row.pass;
  }
  return report;
}

CsvReport RunExperiment(const ExperimentConfig& config) {
  switch (config.kind) {
    case ExperimentKind::kVarianceEval: return RunVarianceEval(config);
    case ExperimentKind::kTrain: return RunTraining(config);
    case ExperimentKind::kIdentityCheck: return RunIdentityChecks(config);
  }
  Throw(ErrorCode::kConfig, "unknown experiment kind");
}

}  // namespace steincv
