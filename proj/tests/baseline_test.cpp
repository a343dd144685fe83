#include <cmath>
#include <cstdint>
#include <limits>

#include <Eigen/Eigenvalues>

#include <gtest/gtest.h>

#include "stein_cv/baseline.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"
#include "test_util.hpp"

namespace steincv {
namespace {

using testing::FdGradient;
using testing::RelErr;

constexpr BaselineKind kAllKinds[] = {BaselineKind::kValue, BaselineKind::kLinear,
                                      BaselineKind::kQuadratic, BaselineKind::kMlp};

struct Instance {
  GaussianPolicy policy;
  Baseline baseline;
};

// Tanh-free relu nets are piecewise linear; random instances land away from
// kinks with probability one, which is enough for FD at h = 1e-5.
Instance MakeInstance(BaselineKind kind, int ds, int da, Rng& rng) {
  const int hidden[] = {6};
  Instance in;
  in.policy = GaussianPolicy::Create(ds, da, hidden, 0.0, rng);
  in.policy.SetParams(testing::RandomParams(in.policy.num_params(), rng, 0.6));
  BaselineSpec spec;
  spec.kind = kind;
  spec.value_hidden = {5};
  spec.psi_hidden = 6;
  in.baseline = Baseline::Create(spec, ds, da, rng);
  if (in.baseline.num_psi_params() > 0)
    in.baseline.SetPsiParams(testing::RandomParams(in.baseline.num_psi_params(), rng, 0.6));
  return in;
}

TEST(Baseline, KindNames) {
  for (BaselineKind k : kAllKinds) EXPECT_EQ(ParseBaselineKind(BaselineKindName(k)), k);
  EXPECT_THROW(ParseBaselineKind("cubic"), Error);
}

TEST(Baseline, ValueKindHasNoPsi) {
  Rng rng(1);
  const Instance in = MakeInstance(BaselineKind::kValue, 3, 2, rng);
  const Matrix s = Matrix::Random(3, 4), a = Matrix::Random(2, 4);
  EXPECT_EQ(in.baseline.num_psi_params(), 0);
  EXPECT_EQ(in.baseline.Psi(s, a, in.policy).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(in.baseline.ActionGrad(s, a, in.policy).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(in.baseline.Phi(s, a, in.policy), in.baseline.Value(s));
}

TEST(Baseline, PhiIsValuePlusPsi) {
  Rng rng(2);
  for (BaselineKind k : kAllKinds) {
    const Instance in = MakeInstance(k, 3, 2, rng);
    const Matrix s = Matrix::Random(3, 4), a = Matrix::Random(2, 4);
    const Vector expected = in.baseline.Value(s) + in.baseline.Psi(s, a, in.policy);
    EXPECT_LT(RelErr(in.baseline.Phi(s, a, in.policy), expected), 1e-15);
  }
}

TEST(Baseline, LinearPsiVanishesAtPolicyMean) {
  Rng rng(3);
  const Instance in = MakeInstance(BaselineKind::kLinear, 3, 2, rng);
  const Matrix s = Matrix::Random(3, 5);
  EXPECT_LT(in.baseline.Psi(s, in.policy.Mean(s), in.policy).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Baseline, QuadraticPsiByHand) {
  Rng rng(4);
  const Instance in = MakeInstance(BaselineKind::kQuadratic, 2, 2, rng);
  const Vector s = rng.NormalVector(2), a = rng.NormalVector(2);
  const Vector m = in.baseline.m_net().Forward(s).col(0);
  const Vector d = in.baseline.QuadraticScale();
  const Vector r = a - m;
  const double expected = -(r.array().square() / d.array()).sum();
  EXPECT_NEAR(in.baseline.Psi(s, a, in.policy)(0), expected, 1e-13);
  for (Eigen::Index i = 0; i < d.size(); ++i)
    EXPECT_NEAR(d(i), std::log1p(std::exp(in.baseline.diag_raw()(i))), 1e-14);
}

TEST(Baseline, ActionGradMatchesFd) {
  Rng rng(5);
  for (BaselineKind k : kAllKinds) {
    for (int trial = 0; trial < 5; ++trial) {
      const Instance in = MakeInstance(k, 3, 2, rng);
      const Vector s = rng.NormalVector(3), a = rng.NormalVector(2);
      const auto f = [&](const Vector& x) { return in.baseline.Phi(s, x, in.policy)(0); };
      const Vector fd = FdGradient(f, a);
      const Vector g = in.baseline.ActionGrad(s, a, in.policy).col(0);
      if (k == BaselineKind::kValue) EXPECT_LT(fd.norm(), 1e-9);
      else EXPECT_LT(RelErr(g, fd), 1e-7) << BaselineKindName(k);
    }
  }
}

TEST(Baseline, ActionHessianMatchesFd) {
  Rng rng(6);
  for (BaselineKind k : {BaselineKind::kLinear, BaselineKind::kQuadratic}) {
    const Instance in = MakeInstance(k, 3, 2, rng);
    const Vector s = rng.NormalVector(3), a = rng.NormalVector(2);
    const Matrix h = in.baseline.ActionHessian(s, a, in.policy);
    for (int i = 0; i < 2; ++i) {
      const auto gi = [&](const Vector& x) {
        return in.baseline.ActionGrad(s, x, in.policy)(i, 0);
      };
      EXPECT_LT(RelErr(h.row(i).transpose(), FdGradient(gi, a)), 1e-7);
    }
    EXPECT_LT(RelErr(in.baseline.ActionHessianDiag(s, a, in.policy).col(0), h.diagonal()),
              1e-15);
  }
}

TEST(Baseline, MlpHessianIsUnsupported) {
  Rng rng(7);
  const Instance in = MakeInstance(BaselineKind::kMlp, 2, 1, rng);
  try {
    in.baseline.ActionHessian(Vector::Zero(2), Vector::Zero(1), in.policy);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
  }
}

TEST(Baseline, PsiParamVjpMatchesFd) {
  Rng rng(8);
  for (BaselineKind k : {BaselineKind::kLinear, BaselineKind::kQuadratic, BaselineKind::kMlp}) {
    const Instance in = MakeInstance(k, 3, 2, rng);
    const Matrix s = Matrix::Random(3, 4), a = Matrix::Random(2, 4);
    const Vector c = Vector::Random(4);
    const Matrix tau = Matrix::Random(2, 4);
    const auto f = [&](const Vector& w) {
      Baseline b = in.baseline;
      b.SetPsiParams(w);
      return c.dot(b.Psi(s, a, in.policy)) +
             (tau.array() * b.ActionGrad(s, a, in.policy).array()).sum();
    };
    const Vector g = in.baseline.PsiParamVjp(s, a, in.policy, c, tau);
    EXPECT_LT(RelErr(g, FdGradient(f, in.baseline.PsiParams())), 1e-7) << BaselineKindName(k);
  }
}

// Per-sample Gaussian-approximation variance written out directly.
double MinVarBruteForce(const Instance& in, const Matrix& s, const Matrix& a,
                        const Vector& adv) {
  const int da = in.policy.action_dim();
  const Vector var = in.policy.stddev().cwiseAbs2();
  double total = 0.0;
  for (Eigen::Index t = 0; t < s.cols(); ++t) {
    const Vector mu = in.policy.Mean(s.col(t)).col(0);
    const Vector c = (mu - a.col(t)).cwiseQuotient(var);
    const double rho = adv(t) - in.baseline.Psi(s.col(t), a.col(t), in.policy)(0);
    const Vector v = in.baseline.ActionGrad(s.col(t), a.col(t), in.policy).col(0);
    Matrix S = 0.5 * (c * c.transpose());
    for (int i = 0; i < da; ++i) S(i, i) -= 0.5 / var(i);
    total += (-c * rho + v).squaredNorm() + (S * rho - 0.5 * c * v.transpose()).squaredNorm();
  }
  return total / static_cast<double>(s.cols());
}

TEST(MinVar, ObjectiveMatchesDefinition) {
  Rng rng(9);
  for (BaselineKind k : kAllKinds) {
    const Instance in = MakeInstance(k, 3, 2, rng);
    const Matrix s = Matrix::Random(3, 6), a = Matrix::Random(2, 6);
    const Vector adv = Vector::Random(6);
    const double expected = MinVarBruteForce(in, s, a, adv);
    EXPECT_NEAR(MinVarObjective(in.baseline, in.policy, s, a, adv), expected,
                1e-12 * expected);
  }
}

TEST(MinVar, GradientMatchesFd) {
  Rng rng(10);
  for (BaselineKind k : {BaselineKind::kLinear, BaselineKind::kQuadratic, BaselineKind::kMlp}) {
    const Instance in = MakeInstance(k, 3, 2, rng);
    const Matrix s = Matrix::Random(3, 5), a = Matrix::Random(2, 5);
    const Vector adv = Vector::Random(5);
    Vector grad;
    MinVarObjectiveGrad(in.baseline, in.policy, s, a, adv, &grad);
    const auto f = [&](const Vector& w) {
      Baseline b = in.baseline;
      b.SetPsiParams(w);
      return MinVarObjective(b, in.policy, s, a, adv);
    };
    EXPECT_LT(RelErr(grad, FdGradient(f, in.baseline.PsiParams())), 1e-6) << BaselineKindName(k);
  }
}

TEST(MinVar, FitDecreasesObjectiveAndRespectsMask) {
  Rng rng(11);
  Instance in = MakeInstance(BaselineKind::kQuadratic, 2, 1, rng);
  const Matrix s = Matrix::Random(2, 200);
  Matrix a(1, 200);
  for (int t = 0; t < 200; ++t) a(0, t) = in.policy.SampleAction(s.col(t), rng).action(0);
  Vector adv(200);
  for (int t = 0; t < 200; ++t) adv(t) = -std::pow(a(0, t) - 0.3 * s(0, t), 2);
  FitOptions opt;
  opt.steps = 300;
  opt.lr = 1e-2;
  opt.trainable = Vector::Ones(in.baseline.num_psi_params());
  opt.trainable.tail(1).setZero();
  const double raw_before = in.baseline.diag_raw()(0);
  const FitReport r = MinVarFit(in.baseline, in.policy, s, a, adv, opt);
  EXPECT_LT(r.objective_after, r.objective_before);
  EXPECT_EQ(in.baseline.diag_raw()(0), raw_before);
}

TEST(FitQ, RecoversQuadraticTarget) {
  Rng rng(12);
  Instance in = MakeInstance(BaselineKind::kQuadratic, 1, 1, rng);
  const Matrix s = Matrix::Random(1, 400);
  Matrix a(1, 400);
  for (int t = 0; t < 400; ++t) a(0, t) = in.policy.SampleAction(s.col(t), rng).action(0);
  Vector adv(400);
  for (int t = 0; t < 400; ++t) adv(t) = -std::pow(a(0, t) - 0.5, 2) / 0.8;
  const Vector v = in.baseline.Value(s);
  FitOptions opt;
  opt.steps = 3000;
  opt.lr = 1e-2;
  const FitReport r = FitQ(in.baseline, in.policy, s, a, adv, opt);
  EXPECT_LT(r.objective_after, 0.05 * r.objective_before);
  EXPECT_EQ(in.baseline.Value(s), v);
}

TEST(FitValue, AffineRescalePreservesOutputs) {
  Rng rng(13);
  Instance in = MakeInstance(BaselineKind::kValue, 2, 1, rng);
  const Matrix s = Matrix::Random(2, 50);
  const Vector returns = (1000.0 + 300.0 * Vector::Random(50).array()).matrix();
  const Vector before = in.baseline.Value(s);
  FitOptions opt;
  opt.steps = 1;
  opt.lr = 1e-300;
  FitValue(in.baseline, s, returns, opt);
  EXPECT_NEAR(in.baseline.value_shift(), returns.mean(), 1e-9);
  EXPECT_LT(RelErr(in.baseline.Value(s), before), 1e-12);
}

TEST(FitValue, FitsLargeScaleTargets) {
  Rng rng(14);
  Instance in = MakeInstance(BaselineKind::kValue, 1, 1, rng);
  const Matrix s = Matrix::Random(1, 300);
  const Vector returns = (-5e4 * s.row(0).array().square() - 1e5).transpose().matrix();
  FitOptions opt;
  opt.steps = 1500;
  opt.lr = 1e-2;
  const FitReport r = FitValue(in.baseline, s, returns, opt);
  EXPECT_LT(r.objective_after, 0.02 * r.objective_before);
  EXPECT_NEAR(r.objective_after, ValueObjective(in.baseline, s, returns), 1e-6 * r.objective_after);
}

TEST(FitValue, ZeroStepsIsNoop) {
  Rng rng(15);
  Instance in = MakeInstance(BaselineKind::kMlp, 2, 1, rng);
  const Baseline copy = in.baseline;
  FitOptions opt;
  opt.steps = 0;
  FitValue(in.baseline, Matrix::Random(2, 10), Vector::Random(10), opt);
  EXPECT_TRUE(in.baseline == copy);
}

TEST(Baseline, SetValueAffineValidates) {
  Baseline b;
  EXPECT_THROW(b.SetValueAffine(0.0, 0.0), Error);
  EXPECT_THROW(b.SetValueAffine(std::nan(""), 1.0), Error);
}

TEST(Baseline, QuadraticAtCenterIsValueWithZeroGradient) {
  Rng rng(30);
  const Instance in = MakeInstance(BaselineKind::kQuadratic, 3, 2, rng);
  const Matrix s = Matrix::Random(3, 5);
  const Matrix m = in.baseline.m_net().Forward(s);
  EXPECT_EQ(in.baseline.Phi(s, m, in.policy), in.baseline.Value(s));
  EXPECT_EQ(in.baseline.ActionGrad(s, m, in.policy).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Baseline, LinearHessianIsZero) {
  Rng rng(31);
  const Instance in = MakeInstance(BaselineKind::kLinear, 3, 2, rng);
  const Vector s = rng.NormalVector(3), a = rng.NormalVector(2);
  EXPECT_EQ(in.baseline.ActionHessian(s, a, in.policy).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Baseline, QuadraticUnitScaleHessian) {
  Rng rng(32);
  Instance in = MakeInstance(BaselineKind::kQuadratic, 2, 3, rng);
  Vector w = in.baseline.PsiParams();
  w.tail(3).setConstant(std::log(std::exp(1.0) - 1.0));
  in.baseline.SetPsiParams(w);
  const Matrix h = in.baseline.ActionHessian(rng.NormalVector(2), rng.NormalVector(3), in.policy);
  EXPECT_LT((h + 2.0 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FitValue, ConstantReturns) {
  Rng rng(33);
  Instance in = MakeInstance(BaselineKind::kValue, 2, 1, rng);
  const Matrix s = Matrix::Random(2, 100);
  const Vector returns = Vector::Constant(100, -37.5);
  FitOptions opt;
  opt.steps = 10000;
  opt.lr = 1e-3;
  FitValue(in.baseline, s, returns, opt);
  EXPECT_LT(ValueObjective(in.baseline, s, returns), 1e-4);
}

TEST(FitQ, RealizableTargetIsRecovered) {
  Rng rng(34);
  Instance in = MakeInstance(BaselineKind::kQuadratic, 2, 1, rng);
  const Matrix s = Matrix::Random(2, 300), a = Matrix::Random(1, 300);
  const Vector target = in.baseline.Psi(s, a, in.policy);
  in.baseline.SetPsiParams(in.baseline.PsiParams() +
                           0.05 * rng.NormalVector(in.baseline.num_psi_params()));
  FitOptions opt;
  opt.steps = 2000;
  opt.lr = 1e-2;
  const FitReport r = FitQ(in.baseline, in.policy, s, a, target, opt);
  EXPECT_LT(r.objective_after, 1e-3);
  EXPECT_LE(r.objective_after, r.objective_before);
}

TEST(FitQ, ValueKindIsNoop) {
  Rng rng(35);
  Instance in = MakeInstance(BaselineKind::kValue, 2, 1, rng);
  const Baseline copy = in.baseline;
  FitOptions opt;
  const FitReport q = FitQ(in.baseline, in.policy, Matrix::Random(2, 5), Matrix::Random(1, 5),
                           Vector::Random(5), opt);
  const FitReport v = MinVarFit(in.baseline, in.policy, Matrix::Random(2, 5),
                                Matrix::Random(1, 5), Vector::Random(5), opt);
  EXPECT_TRUE(q.noop);
  EXPECT_TRUE(v.noop);
  EXPECT_TRUE(in.baseline == copy);
}

TEST(MinVar, SingleCoefficientMatchesGridSearch) {
  Rng rng(36);
  Instance in = MakeInstance(BaselineKind::kQuadratic, 1, 1, rng);
  const Matrix s = Matrix::Constant(1, 1, 0.4);
  const Matrix m = in.baseline.m_net().Forward(s);
  const Matrix a = Matrix::Constant(1, 1, m(0, 0) + 0.9);
  const Vector adv = Vector::Constant(1, -1.3);
  Baseline probe = in.baseline;
  Vector w = probe.PsiParams();
  const auto objective_at = [&](double raw) {
    w(w.size() - 1) = raw;
    probe.SetPsiParams(w);
    return MinVarObjective(probe, in.policy, s, a, adv);
  };
  double best_raw = 0.0, best = std::numeric_limits<double>::infinity();
  const int points = 10000;
  for (int i = 0; i < points; ++i) {
    const double raw = -5.0 + 10.0 * i / (points - 1);
    const double f = objective_at(raw);
    if (f < best) best = f, best_raw = raw;
  }
  ASSERT_GT(best_raw, -4.9);
  ASSERT_LT(best_raw, 4.9);
  FitOptions opt;
  opt.steps = 20000;
  opt.lr = 1e-3;
  opt.trainable = Vector::Zero(in.baseline.num_psi_params());
  opt.trainable(opt.trainable.size() - 1) = 1.0;
  MinVarFit(in.baseline, in.policy, s, a, adv, opt);
  EXPECT_NEAR(in.baseline.diag_raw()(0), best_raw, 1e-3);
}

TEST(MinVar, ZeroTargetWithoutPsiIsZero) {
  Rng rng(37);
  const Instance in = MakeInstance(BaselineKind::kValue, 2, 2, rng);
  Vector grad;
  EXPECT_EQ(MinVarObjectiveGrad(in.baseline, in.policy, Matrix::Random(2, 4),
                                Matrix::Random(2, 4), Vector::Zero(4), &grad),
            0.0);
  EXPECT_EQ(grad.size(), 0);
}

TEST(MinVar, FixedRunDoesNotIncreaseObjective) {
  Rng rng(38);
  Instance in = MakeInstance(BaselineKind::kMlp, 2, 1, rng);
  const Matrix s = Matrix::Random(2, 100);
  Matrix a(1, 100);
  for (int t = 0; t < 100; ++t) a(0, t) = in.policy.SampleAction(s.col(t), rng).action(0);
  const Vector adv = Vector::Random(100);
  FitOptions opt;
  const FitReport r = MinVarFit(in.baseline, in.policy, s, a, adv, opt);
  EXPECT_EQ(r.steps, 500);
  EXPECT_LE(r.objective_after, r.objective_before);
}

TEST(Baseline, LinearPhiIsAffineInAction) {
  Rng rng(39);
  for (int i = 0; i < 20; ++i) {
    const Instance in = MakeInstance(BaselineKind::kLinear, 3, 2, rng);
    const Matrix s = rng.NormalVector(3);
    const Matrix a1 = rng.NormalVector(2), a2 = rng.NormalVector(2);
    const double t = rng.Uniform(-2.0, 2.0);
    const Matrix at = a1 + t * (a2 - a1);
    const double p1 = in.baseline.Phi(s, a1, in.policy)(0);
    const double p2 = in.baseline.Phi(s, a2, in.policy)(0);
    const double pt = in.baseline.Phi(s, at, in.policy)(0);
    EXPECT_NEAR(pt, p1 + t * (p2 - p1), 1e-10);
  }
}

TEST(Baseline, QuadraticHessianIsSymmetricNegativeDefinite) {
  Rng rng(40);
  for (int i = 0; i < 20; ++i) {
    const Instance in = MakeInstance(BaselineKind::kQuadratic, 2, 3, rng);
    const Matrix h = in.baseline.ActionHessian(rng.NormalVector(2), rng.NormalVector(3), in.policy);
    EXPECT_EQ(h, h.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    EXPECT_LT(eig.eigenvalues().maxCoeff(), 0.0);
  }
}

TEST(Fit, PsiFitsNeverTouchValueNet) {
  Rng rng(41);
  for (BaselineKind kind : kAllKinds) {
    Instance in = MakeInstance(kind, 2, 1, rng);
    const Matrix s = Matrix::Random(2, 64);
    Matrix a(1, 64);
    for (int t = 0; t < 64; ++t) a(0, t) = in.policy.SampleAction(s.col(t), rng).action(0);
    const Vector adv = Vector::Random(64);
    const DenseNet net = in.baseline.value_net();
    const double shift = in.baseline.value_shift(), scale = in.baseline.value_scale();
    FitOptions opt;
    opt.steps = 20;
    opt.lr = 1e-2;
    FitQ(in.baseline, in.policy, s, a, adv, opt);
    MinVarFit(in.baseline, in.policy, s, a, adv, opt);
    EXPECT_TRUE(in.baseline.value_net() == net) << BaselineKindName(kind);
    EXPECT_EQ(in.baseline.value_shift(), shift);
    EXPECT_EQ(in.baseline.value_scale(), scale);
  }
}

TEST(MinVar, FitDecreasesObjectiveForFourSeeds) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Rng rng(seed);
    Instance in = MakeInstance(BaselineKind::kMlp, 2, 1, rng);
    const Matrix s = Matrix::Random(2, 128);
    Matrix a(1, 128);
    for (int t = 0; t < 128; ++t) a(0, t) = in.policy.SampleAction(s.col(t), rng).action(0);
    Vector adv(128);
    for (int t = 0; t < 128; ++t) adv(t) = -std::pow(a(0, t) - s(1, t), 2);
    FitOptions opt;
    opt.steps = 200;
    opt.lr = 1e-2;
    const FitReport r = MinVarFit(in.baseline, in.policy, s, a, adv, opt);
    EXPECT_LT(r.objective_after, r.objective_before) << "seed " << seed;
  }
}

}  // namespace
}  // namespace steincv
