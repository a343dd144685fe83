#ifndef STEIN_CV_ENVS_HPP_
#define STEIN_CV_ENVS_HPP_

#include <string>
#include <vector>

#include "stein_cv/diffnet.hpp"

namespace steincv {

class GaussianPolicy;
class Rng;

enum class EnvKind { kLqr, kPointMass };

const char* EnvKindName(EnvKind kind);
EnvKind ParseEnvKind(const std::string& name);

// LQR: s' = A s + B a, r = -s^T Qc s - a^T Rc a at the current s.
// PointMass: state (px, py, vx, vy), actions clipped to +-action_clip,
//   p' = p + dt v, v' = v + dt a, r = -|p|^2 - 0.1 |a|^2.
// Initial states are N(0, s0_scale^2 I). Neither env terminates on its own;
// episodes end by truncation at the horizon.
struct EnvModel {
  EnvKind kind = EnvKind::kLqr;
  Matrix A, B, Qc, Rc;
  double s0_scale = 1.0;
  int horizon = 100;
  double gamma = 0.99;
  double action_clip = 1.0;
  double dt = 0.1;

  int state_dim() const;
  int action_dim() const;
  void Validate() const;

  static EnvModel ScalarLqr();
  static EnvModel Lqr2d();
  static EnvModel PointMass();
};

Vector EnvReset(const EnvModel& env, Rng& rng);

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};
StepResult EnvStep(const EnvModel& env, const VectorRef& state,
                   const VectorRef& action);

// Columns are time steps. `final_state` follows the last action; it is the
// bootstrap state when `truncated` is set.
struct Trajectory {
  Matrix states;
  Matrix actions;
  Matrix noises;
  Vector rewards;
  Vector final_state;
  bool terminal = false;
  bool truncated = false;

  int length() const { return static_cast<int>(rewards.size()); }
};

// Runs at most `max_steps` steps from `start`, or from a fresh reset when
// `start` is empty.
Trajectory Rollout(const EnvModel& env, const GaussianPolicy& policy,
                   int max_steps, Rng& rng, const Vector& start = Vector());

// Whole episodes until `n_steps` steps are collected; the last one is cut short
// if needed. Episode k draws from rng.Child({k}).
std::vector<Trajectory> CollectSteps(const EnvModel& env,
                                     const GaussianPolicy& policy, int n_steps,
                                     const Rng& rng);

// Undiscounted return of the mean action policy from each given start state.
double DeterministicReturn(const EnvModel& env, const GaussianPolicy& policy,
                           const Matrix& starts);

// Exact value of a linear-Gaussian policy a = -K s + sigma xi on an LQR env:
//   V(s) = s'P s + v0,
//   Q(s,a) = s'Mss s + 2 s'Msa a + a'Maa a + q0.
struct LqrValue {
  Matrix P;
  double v0 = 0.0;
  Matrix Mss, Msa, Maa;
  double q0 = 0.0;

  double V(const VectorRef& s) const;
  double Q(const VectorRef& s, const VectorRef& a) const;
};

LqrValue LqrOracle(const EnvModel& env, const Matrix& gain, const Vector& sigma);

// Stationary state covariance of s' = (A - BK) s + B sigma xi.
Matrix StationaryCovariance(const EnvModel& env, const Matrix& gain,
                            const Vector& sigma);

// Optimal gain for the discounted deterministic LQR problem.
Matrix RiccatiGain(const EnvModel& env);

}  // namespace steincv

#endif  // STEIN_CV_ENVS_HPP_
