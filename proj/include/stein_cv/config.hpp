#ifndef STEIN_CV_CONFIG_HPP_
#define STEIN_CV_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "stein_cv/ppo.hpp"

namespace steincv {

enum class ExperimentKind { kVarianceEval, kTrain, kIdentityCheck };

const char* ExperimentKindName(ExperimentKind kind);

struct VarianceEvalSpec {
  int freeze_iterations = 50;
  int holdout_steps = 100000;
  std::vector<int> sample_sizes = {500, 1000, 2000, 4000};
  int batches = 100;
  bool operator==(const VarianceEvalSpec&) const = default;
};

struct CheckSpec {
  std::vector<int> residual_sizes = {100, 1000, 10000, 100000};
  double residual_threshold = 0.02;
  int fd_instances = 50;
  int batches = 200;
  int batch_size = 200;
  bool operator==(const CheckSpec&) const = default;
};

// Everything a run depends on besides the seed override. The text form is a
// flat key = value file with [section] headers; see Render() for every key.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kTrain;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds = {1};
  int threads = 1;

  EnvModel env = EnvModel::ScalarLqr();
  std::vector<int> policy_hidden;
  double log_std_init = 0.0;

  std::vector<int> value_hidden = {64};
  int psi_hidden = 64;
  FitOn fit_on = FitOn::kCurrent;
  int fit_steps = 500;
  double fit_lr = 1e-3;
  int fit_batch = 0;

  std::vector<MethodSpec> methods = {MethodSpec()};
  AdvantageOptions advantage;

  PpoConstants ppo;
  int iterations = 100;

  int eval_episodes = 10;
  std::uint64_t eval_seed = 12345;

  VarianceEvalSpec variance;
  CheckSpec check;

  std::string Render() const;
  static ExperimentConfig Parse(const std::string& text);
  static ExperimentConfig Load(const std::string& path);
  // FNV-1a 64 of Render(), as 16 hex digits.
  std::string Hash() const;

  // Options for one PPO run of `method` with `seed`.
  TrainOptions TrainOptionsFor(const MethodSpec& method, std::uint64_t seed) const;
  Matrix EvalStarts() const;

  bool operator==(const ExperimentConfig& other) const;
};

std::string FormatDouble(double x);

}  // namespace steincv

#endif  // STEIN_CV_CONFIG_HPP_
