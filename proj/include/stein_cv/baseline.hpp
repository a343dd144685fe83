#ifndef STEIN_CV_BASELINE_HPP_
#define STEIN_CV_BASELINE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "stein_cv/diffnet.hpp"

namespace steincv {

class GaussianPolicy;
class Rng;

enum class BaselineKind { kValue, kLinear, kQuadratic, kMlp };

const char* BaselineKindName(BaselineKind kind);
BaselineKind ParseBaselineKind(const std::string& name);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::kValue;
  std::vector<int> value_hidden = {64};
  int psi_hidden = 64;
};

// phi(s, a) = V(s) + psi(s, a), with V(s) = shift + scale * value_net(s).
//
//   Value:      psi = 0.
//   Linear:     psi = <grad_a q(s, mu(s)), a - mu(s)>, q a relu net over [s; a]
//               and mu the policy mean.
//   Quadratic:  psi = -(a - m(s))' D^-1 (a - m(s)), D = diag(softplus(raw)).
//   Mlp:        psi = head([relu(enc(s)); a]).
//
// psi parameter order: Linear q-net; Quadratic m-net then raw; Mlp encoder
// then head. Batched members take columns as samples. The policy argument is
// read only by the Linear kind.
class Baseline {
 public:
  Baseline() = default;
  static Baseline Create(const BaselineSpec& spec, int state_dim, int action_dim,
                         Rng& rng);

  BaselineKind kind() const { return kind_; }
  int state_dim() const { return value_net_.input_dim(); }
  int action_dim() const { return action_dim_; }

  const DenseNet& value_net() const { return value_net_; }
  DenseNet& mutable_value_net() { return value_net_; }
  double value_shift() const { return value_shift_; }
  double value_scale() const { return value_scale_; }
  void SetValueAffine(double shift, double scale);
  // Value net and its output affine.
  void CopyValueFrom(const Baseline& other);
  const DenseNet& q_net() const { return q_net_; }
  const DenseNet& m_net() const { return m_net_; }
  const Vector& diag_raw() const { return diag_raw_; }
  const ConcatNet& mlp() const { return mlp_; }

  int num_psi_params() const;
  Vector PsiParams() const;
  void SetPsiParams(const VectorRef& params);

  Vector Value(const MatrixRef& states) const;
  Vector Psi(const MatrixRef& states, const MatrixRef& actions,
             const GaussianPolicy& policy) const;
  Vector Phi(const MatrixRef& states, const MatrixRef& actions,
             const GaussianPolicy& policy) const;
  // grad_a phi == grad_a psi, per column.
  Matrix ActionGrad(const MatrixRef& states, const MatrixRef& actions,
                    const GaussianPolicy& policy) const;
  // Exact action Hessian for one sample; Mlp is unsupported.
  Matrix ActionHessian(const VectorRef& state, const VectorRef& action,
                       const GaussianPolicy& policy) const;
  // Hessian diagonals per column; Mlp is unsupported.
  Matrix ActionHessianDiag(const MatrixRef& states, const MatrixRef& actions,
                           const GaussianPolicy& policy) const;

  // Gradient w.r.t. the psi parameters of
  //   sum_t  c_t psi(s_t, a_t) + <tau_t, grad_a psi(s_t, a_t)>.
  // `tau` may be empty.
  Vector PsiParamVjp(const MatrixRef& states, const MatrixRef& actions,
                     const GaussianPolicy& policy, const VectorRef& c,
                     const Matrix& tau) const;

  // Quadratic kind: D diagonal.
  Vector QuadraticScale() const;

  bool operator==(const Baseline& other) const;

 private:
  friend Baseline MakeBaseline(BaselineKind, DenseNet, DenseNet, DenseNet, Vector,
                               ConcatNet, int);

  BaselineKind kind_ = BaselineKind::kValue;
  int action_dim_ = 0;
  DenseNet value_net_;
  double value_shift_ = 0.0;
  double value_scale_ = 1.0;
  DenseNet q_net_;
  DenseNet m_net_;
  Vector diag_raw_;
  ConcatNet mlp_;
};

// Assembles a baseline from parts (used by deserialization and tests).
Baseline MakeBaseline(BaselineKind kind, DenseNet value_net, DenseNet q_net,
                      DenseNet m_net, Vector diag_raw, ConcatNet mlp,
                      int action_dim);

struct FitOptions {
  int steps = 500;
  double lr = 1e-3;
  int batch_size = 0;  // 0: full dataset every step
  std::uint64_t seed = 0;
  // Optional 0/1 mask over the fitted parameters; zero entries stay fixed.
  Vector trainable;
};

struct FitReport {
  double objective_before = 0.0;
  double objective_after = 0.0;
  int steps = 0;
  bool noop = false;
};

// mean_t (V(s_t) - R_t)^2 over the value net only.
// FitValue first moves the output affine to the mean and standard deviation of
// the returns (the RMS error of V when the returns are nearly constant),
// rescaling the last layer so V is unchanged, then fits the net to the
// standardized returns.
double ValueObjective(const Baseline& b, const MatrixRef& states,
                     const VectorRef& returns);
FitReport FitValue(Baseline& b, const MatrixRef& states, const VectorRef& returns,
                   const FitOptions& options);

// mean_t (phi(s_t, a_t) - Qhat_t)^2 with V frozen, written with the
// advantage target adv_t = Qhat_t - V(s_t).
double FitQObjective(const Baseline& b, const GaussianPolicy& policy,
                     const MatrixRef& states, const MatrixRef& actions,
                     const VectorRef& adv);
FitReport FitQ(Baseline& b, const GaussianPolicy& policy, const MatrixRef& states,
               const MatrixRef& actions, const VectorRef& adv,
               const FitOptions& options);

// Gaussian approximation of the estimator variance,
//   mean_t |g_mu|^2 + |g_Sigma|_F^2,
//   g_mu    = -c rho + v,
//   g_Sigma = S rho - c v' / 2,
// with c = grad_a log pi, S = grad_Sigma log pi = (c c' - Sigma^-1) / 2,
// rho = adv - psi and v = grad_a psi.
double MinVarObjective(const Baseline& b, const GaussianPolicy& policy,
                       const MatrixRef& states, const MatrixRef& actions,
                       const VectorRef& adv);
// Objective together with its gradient in the psi parameters.
double MinVarObjectiveGrad(const Baseline& b, const GaussianPolicy& policy,
                           const MatrixRef& states, const MatrixRef& actions,
                           const VectorRef& adv, Vector* grad);
FitReport MinVarFit(Baseline& b, const GaussianPolicy& policy,
                    const MatrixRef& states, const MatrixRef& actions,
                    const VectorRef& adv, const FitOptions& options);

}  // namespace steincv

#endif  // STEIN_CV_BASELINE_HPP_
