#include "stein_cv/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = Trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void BadValue(const std::string& key, const std::string& value,
                           const char* expected) {
  Throw(ErrorCode::kConfig,
        "key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double ToDouble(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x))
    BadValue(key, value, "a finite number");
  return x;
}

long long ToInt(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno == ERANGE) BadValue(key, value, "an integer");
  return x;
}

std::uint64_t ToU64(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  if (!value.empty() && value[0] == '-') BadValue(key, value, "an unsigned integer");
  const unsigned long long x = std::strtoull(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno == ERANGE)
    BadValue(key, value, "an unsigned integer");
  return x;
}

int ToNonNegative(const std::string& key, const std::string& value) {
  const long long x = ToInt(key, value);
  if (x < 0 || x > 1'000'000'000) BadValue(key, value, "a non-negative integer");
  return static_cast<int>(x);
}

int ToPositive(const std::string& key, const std::string& value) {
  const int x = ToNonNegative(key, value);
  if (x == 0) BadValue(key, value, "a positive integer");
  return x;
}

bool ToBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  BadValue(key, value, "true or false");
}

std::vector<int> ToIntList(const std::string& key, const std::string& value,
                           bool allow_empty) {
  std::vector<int> out;
  for (const std::string& item : SplitList(value)) out.push_back(ToPositive(key, item));
  if (!allow_empty && out.empty()) BadValue(key, value, "a non-empty list");
  return out;
}

std::vector<double> ToDoubleList(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const std::string& item : SplitList(value)) out.push_back(ToDouble(key, item));
  if (out.empty()) BadValue(key, value, "a list of numbers");
  return out;
}

template <class T>
std::string JoinList(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string RenderMatrix(const Matrix& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (r || c) out += ", ";
      out += FormatDouble(m(r, c));
    }
  return out;
}

// A scalar means c * I (square) and is only allowed for square shapes.
Matrix BuildMatrix(const std::string& key, const std::vector<double>& values,
                   int rows, int cols) {
  if (values.size() == 1 && rows == cols)
    return values[0] * Matrix::Identity(rows, cols);
  if (static_cast<int>(values.size()) != rows * cols) {
    Throw(ErrorCode::kConfig, "key '" + key + "': expected " + std::to_string(rows) +
                                  "x" + std::to_string(cols) + " = " +
                                  std::to_string(rows * cols) + " values, got " +
                                  std::to_string(values.size()));
  }
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = values[r * cols + c];
  return m;
}

const char* FitOnName(FitOn f) { return f == FitOn::kCurrent ? "current" : "previous"; }

}  // namespace

std::string FormatDouble(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

const char* ExperimentKindName(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kVarianceEval: return "variance_eval";
    case ExperimentKind::kTrain: return "train";
    case ExperimentKind::kIdentityCheck: return "identity_check";
  }
  return "train";
}

std::string ExperimentConfig::Render() const {
  std::ostringstream o;
  auto kv = [&o](const char* key, const std::string& value) {
    o << key << " = " << value << "\n";
  };
  auto d = [](double x) { return FormatDouble(x); };
  auto i = [](long long x) { return std::to_string(x); };

  o << "[experiment]\n";
  kv("kind", ExperimentKindName(kind));
  kv("seed", std::to_string(seed));
  kv("seeds", JoinList(seeds));
  kv("threads", i(threads));

  o << "\n[env]\n";
  kv("kind", EnvKindName(env.kind));
  if (env.kind == EnvKind::kLqr) {
    kv("state_dim", i(env.state_dim()));
    kv("action_dim", i(env.action_dim()));
    kv("A", RenderMatrix(env.A));
    kv("B", RenderMatrix(env.B));
    kv("Qc", RenderMatrix(env.Qc));
    kv("Rc", RenderMatrix(env.Rc));
  } else {
    kv("action_clip", d(env.action_clip));
    kv("dt", d(env.dt));
  }
  kv("s0_scale", d(env.s0_scale));
  kv("horizon", i(env.horizon));
  kv("gamma", d(env.gamma));

  o << "\n[policy]\n";
  kv("hidden", JoinList(policy_hidden));
  kv("log_std_init", d(log_std_init));

  o << "\n[baseline]\n";
  kv("value_hidden", JoinList(value_hidden));
  kv("psi_hidden", i(psi_hidden));
  kv("fit_on", FitOnName(fit_on));
  kv("fit_steps", i(fit_steps));
  kv("fit_lr", d(fit_lr));
  kv("fit_batch", i(fit_batch));

  o << "\n[estimator]\n";
  std::string ms;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    if (k) ms += ", ";
    ms += methods[k].Render();
  }
  kv("methods", ms);
  kv("gamma", d(advantage.gamma));
  kv("lambda", d(advantage.lambda));
  kv("normalize_advantages", advantage.normalize ? "true" : "false");

  o << "\n[ppo]\n";
  kv("iterations", i(iterations));
  kv("steps_per_iter", i(ppo.steps_per_iter));
  kv("policy_steps", i(ppo.policy_steps));
  kv("baseline_steps", i(ppo.baseline_steps));
  kv("value_steps", i(ppo.value_steps));
  kv("baseline_batch", i(ppo.baseline_batch));
  kv("value_batch", i(ppo.value_batch));
  kv("policy_lr", d(ppo.policy_lr));
  kv("baseline_lr", d(ppo.baseline_lr));
  kv("value_lr", d(ppo.value_lr));
  kv("kl_target", d(ppo.kl_target));
  kv("alpha", d(ppo.alpha));
  kv("beta_high", d(ppo.beta_high));
  kv("beta_low", d(ppo.beta_low));
  kv("lambda_init", d(ppo.lambda_init));
  kv("lambda_min", d(ppo.lambda_min));
  kv("lambda_max", d(ppo.lambda_max));

  o << "\n[eval]\n";
  kv("episodes", i(eval_episodes));
  kv("seed", std::to_string(eval_seed));

  o << "\n[variance_eval]\n";
  kv("freeze_iterations", i(variance.freeze_iterations));
  kv("holdout_steps", i(variance.holdout_steps));
  kv("sample_sizes", JoinList(variance.sample_sizes));
  kv("batches", i(variance.batches));

  o << "\n[check]\n";
  kv("residual_sizes", JoinList(check.residual_sizes));
  kv("residual_threshold", d(check.residual_threshold));
  kv("fd_instances", i(check.fd_instances));
  kv("batches", i(check.batches));
  kv("batch_size", i(check.batch_size));
  return o.str();
}

ExperimentConfig ExperimentConfig::Parse(const std::string& text) {
  ExperimentConfig c;
  std::map<std::string, std::string> raw_env;
  using Setter = std::function<void(const std::string& key, const std::string& v)>;
  const std::map<std::string, Setter> setters = {
      {"experiment.kind",
       [&](auto& k, auto& v) {
         if (v == "variance_eval") c.kind = ExperimentKind::kVarianceEval;
         else if (v == "train") c.kind = ExperimentKind::kTrain;
         else if (v == "identity_check") c.kind = ExperimentKind::kIdentityCheck;
         else BadValue(k, v, "variance_eval, train or identity_check");
       }},
      {"experiment.seed", [&](auto& k, auto& v) { c.seed = ToU64(k, v); }},
      {"experiment.seeds",
       [&](auto& k, auto& v) {
         c.seeds.clear();
         for (const std::string& s : SplitList(v)) c.seeds.push_back(ToU64(k, s));
         if (c.seeds.empty()) BadValue(k, v, "a non-empty list");
       }},
      {"experiment.threads", [&](auto& k, auto& v) { c.threads = ToPositive(k, v); }},
      {"policy.hidden",
       [&](auto& k, auto& v) { c.policy_hidden = ToIntList(k, v, true); }},
      {"policy.log_std_init", [&](auto& k, auto& v) { c.log_std_init = ToDouble(k, v); }},
      {"baseline.value_hidden",
       [&](auto& k, auto& v) { c.value_hidden = ToIntList(k, v, true); }},
      {"baseline.psi_hidden", [&](auto& k, auto& v) { c.psi_hidden = ToPositive(k, v); }},
      {"baseline.fit_on",
       [&](auto& k, auto& v) {
         if (v == "current") c.fit_on = FitOn::kCurrent;
         else if (v == "previous") c.fit_on = FitOn::kPrevious;
         else BadValue(k, v, "current or previous");
       }},
      {"baseline.fit_steps", [&](auto& k, auto& v) { c.fit_steps = ToNonNegative(k, v); }},
      {"baseline.fit_lr", [&](auto& k, auto& v) { c.fit_lr = ToDouble(k, v); }},
      {"baseline.fit_batch", [&](auto& k, auto& v) { c.fit_batch = ToNonNegative(k, v); }},
      {"estimator.methods",
       [&](auto& k, auto& v) {
         c.methods.clear();
         for (const std::string& m : SplitList(v)) c.methods.push_back(MethodSpec::Parse(m));
         if (c.methods.empty()) BadValue(k, v, "at least one method");
       }},
      {"estimator.gamma", [&](auto& k, auto& v) { c.advantage.gamma = ToDouble(k, v); }},
      {"estimator.lambda", [&](auto& k, auto& v) { c.advantage.lambda = ToDouble(k, v); }},
      {"estimator.normalize_advantages",
       [&](auto& k, auto& v) { c.advantage.normalize = ToBool(k, v); }},
      {"ppo.iterations", [&](auto& k, auto& v) { c.iterations = ToNonNegative(k, v); }},
      {"ppo.steps_per_iter", [&](auto& k, auto& v) { c.ppo.steps_per_iter = ToPositive(k, v); }},
      {"ppo.policy_steps", [&](auto& k, auto& v) { c.ppo.policy_steps = ToNonNegative(k, v); }},
      {"ppo.baseline_steps",
       [&](auto& k, auto& v) { c.ppo.baseline_steps = ToNonNegative(k, v); }},
      {"ppo.value_steps", [&](auto& k, auto& v) { c.ppo.value_steps = ToNonNegative(k, v); }},
      {"ppo.baseline_batch",
       [&](auto& k, auto& v) { c.ppo.baseline_batch = ToNonNegative(k, v); }},
      {"ppo.value_batch", [&](auto& k, auto& v) { c.ppo.value_batch = ToNonNegative(k, v); }},
      {"ppo.policy_lr", [&](auto& k, auto& v) { c.ppo.policy_lr = ToDouble(k, v); }},
      {"ppo.baseline_lr", [&](auto& k, auto& v) { c.ppo.baseline_lr = ToDouble(k, v); }},
      {"ppo.value_lr", [&](auto& k, auto& v) { c.ppo.value_lr = ToDouble(k, v); }},
      {"ppo.kl_target", [&](auto& k, auto& v) { c.ppo.kl_target = ToDouble(k, v); }},
      {"ppo.alpha", [&](auto& k, auto& v) { c.ppo.alpha = ToDouble(k, v); }},
      {"ppo.beta_high", [&](auto& k, auto& v) { c.ppo.beta_high = ToDouble(k, v); }},
      {"ppo.beta_low", [&](auto& k, auto& v) { c.ppo.beta_low = ToDouble(k, v); }},
      {"ppo.lambda_init", [&](auto& k, auto& v) { c.ppo.lambda_init = ToDouble(k, v); }},
      {"ppo.lambda_min", [&](auto& k, auto& v) { c.ppo.lambda_min = ToDouble(k, v); }},
      {"ppo.lambda_max", [&](auto& k, auto& v) { c.ppo.lambda_max = ToDouble(k, v); }},
      {"eval.episodes", [&](auto& k, auto& v) { c.eval_episodes = ToPositive(k, v); }},
      {"eval.seed", [&](auto& k, auto& v) { c.eval_seed = ToU64(k, v); }},
      {"variance_eval.freeze_iterations",
       [&](auto& k, auto& v) { c.variance.freeze_iterations = ToNonNegative(k, v); }},
      {"variance_eval.holdout_steps",
       [&](auto& k, auto& v) { c.variance.holdout_steps = ToPositive(k, v); }},
      {"variance_eval.sample_sizes",
       [&](auto& k, auto& v) { c.variance.sample_sizes = ToIntList(k, v, false); }},
      {"variance_eval.batches",
       [&](auto& k, auto& v) {
         c.variance.batches = ToPositive(k, v);
         if (c.variance.batches < 2) BadValue(k, v, "at least 2");
       }},
      {"check.residual_sizes",
       [&](auto& k, auto& v) { c.check.residual_sizes = ToIntList(k, v, false); }},
      {"check.residual_threshold",
       [&](auto& k, auto& v) { c.check.residual_threshold = ToDouble(k, v); }},
      {"check.fd_instances", [&](auto& k, auto& v) { c.check.fd_instances = ToPositive(k, v); }},
      {"check.batches",
       [&](auto& k, auto& v) {
         c.check.batches = ToPositive(k, v);
         if (c.check.batches < 2) BadValue(k, v, "at least 2");
       }},
      {"check.batch_size", [&](auto& k, auto& v) { c.check.batch_size = ToPositive(k, v); }},
  };
  const std::vector<std::string> env_keys = {
      "kind", "state_dim", "action_dim", "A", "B", "Qc", "Rc", "s0_scale",
      "horizon", "gamma", "action_clip", "dt"};

  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      Require(line.back() == ']', ErrorCode::kConfig, where + "unterminated section header");
      section = Trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    Require(eq != std::string::npos, ErrorCode::kConfig, where + "expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    Require(!section.empty(), ErrorCode::kConfig, where + "key outside of a section");
    if (section == "env") {
      bool known = false;
      for (const auto& k : env_keys) known = known || k == key;
      Require(known, ErrorCode::kConfig, where + "unknown key 'env." + key + "'");
      raw_env[key] = value;
      continue;
    }
    const std::string full = section + "." + key;
    const auto it = setters.find(full);
    Require(it != setters.end(), ErrorCode::kConfig, where + "unknown key '" + full + "'");
    try {
      it->second(full, value);
    } catch (const Error& e) {
      Throw(ErrorCode::kConfig, where + e.what());
    }
  }

  // Environment, assembled once all keys are known.
  auto get = [&](const std::string& k) -> const std::string* {
    auto it = raw_env.find(k);
    return it == raw_env.end() ? nullptr : &it->second;
  };
  const std::string kind = get("kind") ? *get("kind") : "lqr";
  if (kind == "pointmass") {
    c.env = EnvModel::PointMass();
    for (const char* k : {"state_dim", "action_dim", "A", "B", "Qc", "Rc"})
      Require(!get(k), ErrorCode::kConfig, std::string("env.") + k + " does not apply to pointmass");
    if (auto v = get("action_clip")) c.env.action_clip = ToDouble("env.action_clip", *v);
    if (auto v = get("dt")) c.env.dt = ToDouble("env.dt", *v);
  } else if (kind == "lqr") {
    c.env = EnvModel::ScalarLqr();
    for (const char* k : {"action_clip", "dt"})
      Require(!get(k), ErrorCode::kConfig, std::string("env.") + k + " does not apply to lqr");
    const int ds = get("state_dim") ? ToPositive("env.state_dim", *get("state_dim")) : 1;
    const int da = get("action_dim") ? ToPositive("env.action_dim", *get("action_dim")) : 1;
    auto mat = [&](const char* k, int r, int cols, double dflt) {
      const std::string key = std::string("env.") + k;
      if (auto v = get(k)) return BuildMatrix(key, ToDoubleList(key, *v), r, cols);
      Require(r == cols, ErrorCode::kConfig, key + " is required when it is not square");
      return Matrix(dflt * Matrix::Identity(r, cols));
    };
    c.env.A = mat("A", ds, ds, 1.0);
    c.env.B = mat("B", ds, da, 1.0);
    c.env.Qc = mat("Qc", ds, ds, 1.0);
    c.env.Rc = mat("Rc", da, da, 1.0);
  } else {
    BadValue("env.kind", kind, "lqr or pointmass");
  }
  if (auto v = get("s0_scale")) c.env.s0_scale = ToDouble("env.s0_scale", *v);
  if (auto v = get("horizon")) c.env.horizon = ToPositive("env.horizon", *v);
  if (auto v = get("gamma")) c.env.gamma = ToDouble("env.gamma", *v);
  try {
    c.env.Validate();
  } catch (const Error& e) {
    Throw(ErrorCode::kConfig, std::string("env: ") + e.what());
  }
  Require(c.advantage.gamma >= 0.0 && c.advantage.gamma <= 1.0 &&
              c.advantage.lambda >= 0.0 && c.advantage.lambda <= 1.0,
          ErrorCode::kConfig, "estimator.gamma and estimator.lambda must lie in [0, 1]");
  Require(c.ppo.alpha > 1.0 && c.ppo.kl_target > 0.0 && c.ppo.lambda_min > 0.0 &&
              c.ppo.lambda_min <= c.ppo.lambda_max && c.ppo.lambda_init > 0.0,
          ErrorCode::kConfig, "inconsistent ppo constants");
  Require(c.ppo.policy_lr > 0.0 && c.ppo.baseline_lr > 0.0 && c.ppo.value_lr > 0.0 &&
              c.fit_lr > 0.0,
          ErrorCode::kConfig, "learning rates must be positive");
  return c;
}

ExperimentConfig ExperimentConfig::Load(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str());
}

std::string ExperimentConfig::Hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : Render()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainOptions ExperimentConfig::TrainOptionsFor(const MethodSpec& method,
                                               std::uint64_t run_seed) const {
  TrainOptions t;
  t.env = env;
  t.policy_hidden = policy_hidden;
  t.log_std_init = log_std_init;
  t.baseline.kind = method.baseline;
  t.baseline.value_hidden = value_hidden;
  t.baseline.psi_hidden = psi_hidden;
  t.method = method;
  t.ppo = ppo;
  t.advantage = advantage;
  t.fit_on = fit_on;
  t.iterations = iterations;
  t.seed = run_seed;
  t.eval_starts = EvalStarts();
  return t;
}

Matrix ExperimentConfig::EvalStarts() const {
  Rng rng(eval_seed, 0x6576616cULL);
  Matrix starts(env.state_dim(), eval_episodes);
  for (int k = 0; k < eval_episodes; ++k) starts.col(k) = EnvReset(env, rng);
  return starts;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  auto same_matrix = [](const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  const bool env_same =
      env.kind == o.env.kind && same_matrix(env.A, o.env.A) && same_matrix(env.B, o.env.B) &&
      same_matrix(env.Qc, o.env.Qc) && same_matrix(env.Rc, o.env.Rc) &&
      env.s0_scale == o.env.s0_scale && env.horizon == o.env.horizon &&
      env.gamma == o.env.gamma && env.action_clip == o.env.action_clip && env.dt == o.env.dt;
  return env_same && kind == o.kind && seed == o.seed && seeds == o.seeds &&
         threads == o.threads && policy_hidden == o.policy_hidden &&
         log_std_init == o.log_std_init && value_hidden == o.value_hidden &&
         psi_hidden == o.psi_hidden && fit_on == o.fit_on && fit_steps == o.fit_steps &&
         fit_lr == o.fit_lr && fit_batch == o.fit_batch && methods == o.methods &&
         advantage.gamma == o.advantage.gamma && advantage.lambda == o.advantage.lambda &&
         advantage.normalize == o.advantage.normalize && ppo == o.ppo &&
         iterations == o.iterations && eval_episodes == o.eval_episodes &&
         eval_seed == o.eval_seed && variance == o.variance && check == o.check;
}

}  // namespace steincv
