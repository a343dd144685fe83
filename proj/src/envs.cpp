#include "stein_cv/envs.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "stein_cv/error.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"

namespace steincv {

namespace {

constexpr double kOracleTol = 1e-12;
constexpr long kMaxOracleIters = 50'000'000;

double SpectralRadius(const Matrix& m) {
  Eigen::EigenSolver<Matrix> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

const char* EnvKindName(EnvKind kind) {
  return kind == EnvKind::kLqr ? "lqr" : "pointmass";
}

EnvKind ParseEnvKind(const std::string& name) {
  if (name == "lqr") return EnvKind::kLqr;
  if (name == "pointmass") return EnvKind::kPointMass;
  Throw(ErrorCode::kConfig, "unknown env kind '" + name + "'");
}

int EnvModel::state_dim() const {
  return kind == EnvKind::kPointMass ? 4 : static_cast<int>(A.rows());
}

int EnvModel::action_dim() const {
  return kind == EnvKind::kPointMass ? 2 : static_cast<int>(B.cols());
}

void EnvModel::Validate() const {
  Require(horizon > 0, ErrorCode::kInvalidArgument, "horizon must be positive");
  Require(gamma >= 0.0 && gamma < 1.0, ErrorCode::kInvalidArgument,
          "gamma must lie in [0, 1)");
  Require(s0_scale >= 0.0, ErrorCode::kInvalidArgument, "s0_scale must be >= 0");
  if (kind == EnvKind::kPointMass) {
    Require(action_clip > 0.0 && dt > 0.0, ErrorCode::kInvalidArgument,
            "pointmass needs positive action_clip and dt");
    return;
  }
  const long n = A.rows();
  Require(n > 0 && A.cols() == n, ErrorCode::kDimension, "A must be square");
  Require(B.rows() == n && B.cols() > 0, ErrorCode::kDimension,
          "B must have as many rows as A");
  Require(Qc.rows() == n && Qc.cols() == n, ErrorCode::kDimension,
          "Qc must be d_s x d_s");
  Require(Rc.rows() == B.cols() && Rc.cols() == B.cols(), ErrorCode::kDimension,
          "Rc must be d_a x d_a");
}

EnvModel EnvModel::ScalarLqr() {
  EnvModel env;
  env.kind = EnvKind::kLqr;
  env.A = Matrix::Ones(1, 1);
  env.B = Matrix::Ones(1, 1);
  env.Qc = Matrix::Ones(1, 1);
  env.Rc = Matrix::Ones(1, 1);
  env.s0_scale = 1.0;
  env.horizon = 100;
  env.gamma = 0.99;
  return env;
}

EnvModel EnvModel::Lqr2d() {
  // Two decoupled double integrators with step 0.1.
  EnvModel env;
  env.kind = EnvKind::kLqr;
  env.A = Matrix::Identity(4, 4);
  env.A(0, 2) = env.A(1, 3) = 0.1;
  env.B = Matrix::Zero(4, 2);
  env.B(2, 0) = env.B(3, 1) = 0.1;
  env.Qc = Matrix::Identity(4, 4);
  env.Rc = 0.1 * Matrix::Identity(2, 2);
  env.horizon = 100;
  env.gamma = 0.99;
  return env;
}

EnvModel EnvModel::PointMass() {
  EnvModel env;
  env.kind = EnvKind::kPointMass;
  env.horizon = 200;
  env.gamma = 0.99;
  env.action_clip = 1.0;
  env.dt = 0.1;
  return env;
}

Vector EnvReset(const EnvModel& env, Rng& rng) {
  Vector s = rng.NormalVector(env.state_dim());
  return env.s0_scale * s;
}

StepResult EnvStep(const EnvModel& env, const VectorRef& state,
                   const VectorRef& action) {
  Require(state.size() == env.state_dim() && action.size() == env.action_dim(),
          ErrorCode::kDimension, "env step: state or action has wrong size");
  StepResult out;
  if (env.kind == EnvKind::kLqr) {
    out.reward = -state.dot(env.Qc * state) - action.dot(env.Rc * action);
    out.next_state = env.A * state + env.B * action;
    return out;
  }
  const Vector a = action.cwiseMax(-env.action_clip).cwiseMin(env.action_clip);
  out.reward = -state.head(2).squaredNorm() - 0.1 * a.squaredNorm();
  out.next_state.resize(4);
  out.next_state.head(2) = state.head(2) + env.dt * state.tail(2);
  out.next_state.tail(2) = state.tail(2) + env.dt * a;
  return out;
}

Trajectory Rollout(const EnvModel& env, const GaussianPolicy& policy,
                   int max_steps, Rng& rng, const Vector& start) {
  Require(policy.state_dim() == env.state_dim() &&
              policy.action_dim() == env.action_dim(),
          ErrorCode::kDimension, "policy dims do not match the env");
  Require(max_steps >= 0, ErrorCode::kInvalidArgument, "negative step count");
  Vector s = start.size() > 0 ? start : EnvReset(env, rng);
  const int steps = std::min(max_steps, env.horizon);
  Trajectory traj;
  traj.states.resize(env.state_dim(), steps);
  traj.actions.resize(env.action_dim(), steps);
  traj.noises.resize(env.action_dim(), steps);
  traj.rewards.resize(steps);
  int t = 0;
  for (; t < steps; ++t) {
    GaussianPolicy::Draw d = policy.SampleAction(s, rng);
    StepResult r = EnvStep(env, s, d.action);
    traj.states.col(t) = s;
    traj.actions.col(t) = d.action;
    traj.noises.col(t) = d.noise;
    traj.rewards(t) = r.reward;
    s = std::move(r.next_state);
    if (r.done) {
      traj.terminal = true;
      ++t;
      break;
    }
  }
  if (t < steps) {
    traj.states.conservativeResize(Eigen::NoChange, t);
    traj.actions.conservativeResize(Eigen::NoChange, t);
    traj.noises.conservativeResize(Eigen::NoChange, t);
    traj.rewards.conservativeResize(t);
  }
  traj.final_state = s;
  traj.truncated = !traj.terminal;
  return traj;
}

std::vector<Trajectory> CollectSteps(const EnvModel& env,
                                     const GaussianPolicy& policy, int n_steps,
                                     const Rng& rng) {
  std::vector<Trajectory> out;
  int remaining = n_steps;
  for (std::uint64_t episode = 0; remaining > 0; ++episode) {
    Rng child = rng.Child({episode});
    out.push_back(Rollout(env, policy, remaining, child));
    remaining -= out.back().length();
  }
  return out;
}

double DeterministicReturn(const EnvModel& env, const GaussianPolicy& policy,
                           const Matrix& starts) {
  Require(starts.rows() == env.state_dim() && starts.cols() > 0,
          ErrorCode::kDimension, "start states must be d_s x k with k > 0");
  double total = 0.0;
  for (Eigen::Index k = 0; k < starts.cols(); ++k) {
    Vector s = starts.col(k);
    for (int t = 0; t < env.horizon; ++t) {
      StepResult r = EnvStep(env, s, policy.Mean(s));
      total += r.reward;
      s = std::move(r.next_state);
      if (r.done) break;
    }
  }
  return total / static_cast<double>(starts.cols());
}

double LqrValue::V(const VectorRef& s) const { return s.dot(P * s) + v0; }

double LqrValue::Q(const VectorRef& s, const VectorRef& a) const {
  return s.dot(Mss * s) + 2.0 * s.dot(Msa * a) + a.dot(Maa * a) + q0;
}

LqrValue LqrOracle(const EnvModel& env, const Matrix& gain, const Vector& sigma) {
  Require(env.kind == EnvKind::kLqr, ErrorCode::kUnsupported,
          "the value oracle exists only for LQR envs");
  env.Validate();
  Require(gain.rows() == env.action_dim() && gain.cols() == env.state_dim(),
          ErrorCode::kDimension, "gain must be d_a x d_s");
  Require(sigma.size() == env.action_dim(), ErrorCode::kDimension,
          "sigma must have d_a entries");
  const Matrix F = env.A - env.B * gain;
  const double radius = std::sqrt(env.gamma) * SpectralRadius(F);
  Require(radius < 1.0, ErrorCode::kDivergence,
          "policy evaluation diverges: spectral radius of sqrt(gamma)(A - BK) is " +
              std::to_string(radius));
  const Matrix cost = env.Qc + gain.transpose() * env.Rc * gain;
  const Matrix sigma_a = sigma.cwiseProduct(sigma).asDiagonal();

  LqrValue out;
  out.P = -cost;
  for (long it = 0;; ++it) {
    Matrix next = -cost + env.gamma * F.transpose() * out.P * F;
    const double delta = (next - out.P).cwiseAbs().maxCoeff();
    out.P = std::move(next);
    if (delta < kOracleTol) break;
    Require(it < kMaxOracleIters && std::isfinite(delta), ErrorCode::kDivergence,
            "policy evaluation did not converge");
  }
  const Matrix BtPB = env.B.transpose() * out.P * env.B;
  out.v0 = (-(env.Rc * sigma_a).trace() + env.gamma * (BtPB * sigma_a).trace()) /
           (1.0 - env.gamma);
  out.Mss = -env.Qc + env.gamma * env.A.transpose() * out.P * env.A;
  out.Msa = env.gamma * env.A.transpose() * out.P * env.B;
  out.Maa = -env.Rc + env.gamma * BtPB;
  out.q0 = env.gamma * out.v0;
  return out;
}

Matrix StationaryCovariance(const EnvModel& env, const Matrix& gain,
                            const Vector& sigma) {
  Require(env.kind == EnvKind::kLqr, ErrorCode::kUnsupported,
          "stationary covariance exists only for LQR envs");
  const Matrix F = env.A - env.B * gain;
  Require(SpectralRadius(F) < 1.0, ErrorCode::kDivergence,
          "closed loop is not stable");
  const Matrix noise = env.B * sigma.cwiseProduct(sigma).asDiagonal() *
                       env.B.transpose();
  Matrix cov = noise;
  for (long it = 0;; ++it) {
    Matrix next = F * cov * F.transpose() + noise;
    const double delta = (next - cov).cwiseAbs().maxCoeff();
    cov = std::move(next);
    if (delta < kOracleTol) break;
    Require(it < kMaxOracleIters, ErrorCode::kDivergence,
            "stationary covariance did not converge");
  }
  return cov;
}

Matrix RiccatiGain(const EnvModel& env) {
  Require(env.kind == EnvKind::kLqr, ErrorCode::kUnsupported,
          "Riccati gain exists only for LQR envs");
  env.Validate();
  const double g = env.gamma;
  Matrix P = env.Qc;
  Matrix K;
  for (long it = 0;; ++it) {
    const Matrix BtPA = env.B.transpose() * P * env.A;
    const Matrix S = env.Rc + g * env.B.transpose() * P * env.B;
    K = g * S.ldlt().solve(BtPA);
    Matrix next = env.Qc + g * env.A.transpose() * P * env.A - g * BtPA.transpose() * K;
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (delta < kOracleTol * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
    Require(it < kMaxOracleIters && std::isfinite(delta), ErrorCode::kDivergence,
            "Riccati iteration did not converge");
  }
  return K;
}

}  // namespace steincv
