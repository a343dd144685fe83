#include <cmath>
#include <initializer_list>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "stein_cv/baseline.hpp"
#include "stein_cv/envs.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/estimator.hpp"
#include "stein_cv/policy.hpp"
#include "stein_cv/rng.hpp"
#include "test_util.hpp"

namespace steincv {
namespace {

using testing::RelErr;

Trajectory RandomTrajectory(Rng& rng) {
  const int T = 1 + static_cast<int>(rng.NextU64() % 60);
  Trajectory t;
  t.states = Matrix::Zero(1, T);
  t.actions = Matrix::Zero(1, T);
  t.noises = Matrix::Zero(1, T);
  t.rewards = rng.NormalVector(T) * 3.0;
  t.final_state = Vector::Zero(1);
  t.terminal = rng.Uniform(0, 1) < 0.5;
  t.truncated = !t.terminal;
  return t;
}

TEST(Returns, MatchDoubleSum) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const Trajectory t = RandomTrajectory(rng);
    const double gamma = rng.Uniform(0.5, 1.0);
    const Vector r = McReturns(t, gamma);
    for (int i = 0; i < t.length(); ++i) {
      double g = 0.0;
      for (int j = i; j < t.length(); ++j) g += std::pow(gamma, j - i) * t.rewards(j);
      EXPECT_LT(std::abs(r(i) - g), 1e-12);
    }
  }
}

TEST(Gae, MatchesDoubleSumOverTdErrors) {
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const Trajectory t = RandomTrajectory(rng);
    const Vector v = rng.NormalVector(t.length());
    const double fv = rng.Normal();
    const double gamma = 0.995, lambda = rng.Uniform(0.0, 1.0);
    const Vector adv = Gae(t, v, fv, gamma, lambda);
    const int T = t.length();
    for (int i = 0; i < T; ++i) {
      double a = 0.0;
      for (int j = i; j < T; ++j) {
        const double next = j + 1 < T ? v(j + 1) : (t.terminal ? 0.0 : fv);
        const double delta = t.rewards(j) + gamma * next - v(j);
        a += std::pow(gamma * lambda, j - i) * delta;
      }
      EXPECT_LT(std::abs(adv(i) - a), 1e-12);
    }
  }
}

TEST(Gae, LambdaOneIsBootstrappedReturnMinusValue) {
  Rng rng(3);
  Trajectory t = RandomTrajectory(rng);
  t.terminal = false;
  const Vector v = rng.NormalVector(t.length());
  const double fv = 2.5, gamma = 0.97;
  const Vector adv = Gae(t, v, fv, gamma, 1.0);
  const Vector ret = McReturns(t, gamma);
  for (int i = 0; i < t.length(); ++i)
    EXPECT_NEAR(adv(i), ret(i) + std::pow(gamma, t.length() - i) * fv - v(i), 1e-10);
}

TEST(Gae, ShippedDefaults) {
  const AdvantageOptions o;
  EXPECT_EQ(o.gamma, 0.995);
  EXPECT_EQ(o.lambda, 0.98);
  EXPECT_FALSE(o.normalize);
}

TEST(Gae, RejectsMisSizedValues) {
  Rng rng(4);
  const Trajectory t = RandomTrajectory(rng);
  EXPECT_THROW(Gae(t, Vector::Zero(t.length() + 1), 0.0, 0.99, 0.9), Error);
}

struct Fixture {
  GaussianPolicy policy;
  Baseline value, linear, quadratic, mlp;
  EnvModel env;
};

Fixture MakeFixture(Rng& rng) {
  Fixture f;
  f.env = EnvModel::Lqr2d();
  const int hidden[] = {8};
  f.policy = GaussianPolicy::Create(4, 2, hidden, -0.3, rng);
  f.policy.SetParams(testing::RandomParams(f.policy.num_params(), rng, 0.4));
  BaselineSpec spec;
  spec.value_hidden = {8};
  spec.psi_hidden = 8;
  for (auto [kind, out] : {std::pair{BaselineKind::kValue, &f.value},
                           std::pair{BaselineKind::kLinear, &f.linear},
                           std::pair{BaselineKind::kQuadratic, &f.quadratic},
                           std::pair{BaselineKind::kMlp, &f.mlp}}) {
    spec.kind = kind;
    *out = Baseline::Create(spec, 4, 2, rng);
    if (out->num_psi_params() > 0)
      out->SetPsiParams(testing::RandomParams(out->num_psi_params(), rng, 0.5));
  }
  return f;
}

Batch MakeBatch(const Fixture& f, int n, const Rng& rng, bool normalize = false) {
  AdvantageOptions opt;
  opt.normalize = normalize;
  const Baseline& v = f.value;
  return BuildBatch(CollectSteps(f.env, f.policy, n, rng),
                    [&](const MatrixRef& s) { return v.Value(s); }, opt);
}

TEST(Batch, QHatIsAdvantagePlusValue) {
  Rng rng(5);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 300, Rng(6));
  EXPECT_EQ(b.size(), 300);
  EXPECT_LT(RelErr(b.q_hat - b.values, b.adv_raw), 1e-12);
  EXPECT_EQ(b.adv, b.adv_raw);
}

TEST(Batch, NormalizationStandardizes) {
  Rng rng(7);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 300, Rng(8), true);
  EXPECT_TRUE(b.normalized);
  EXPECT_NEAR(b.adv.mean(), 0.0, 1e-12);
  const double var = (b.adv.array() - b.adv.mean()).square().sum() / (b.size() - 1);
  EXPECT_NEAR(var, 1.0, 1e-6);
  EXPECT_LT(RelErr(b.q_hat - b.values, b.adv_raw), 1e-12);
}

TEST(Batch, SubBatchPicksColumns) {
  Rng rng(9);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 50, Rng(10));
  const Batch s = SubBatch(b, {3, 7, 7, 49});
  ASSERT_EQ(s.size(), 4);
  EXPECT_EQ(s.states.col(1), b.states.col(7));
  EXPECT_EQ(s.q_hat(3), b.q_hat(49));
}

TEST(Estimators, VanillaAndValueAreScoreWeightedMeans) {
  Rng rng(11);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 120, Rng(12));
  Vector vanilla = Vector::Zero(f.policy.num_params()), value = vanilla;
  for (int t = 0; t < b.size(); ++t) {
    const Vector g = f.policy.ScoreTheta(b.states.col(t), b.actions.col(t));
    vanilla += g * b.q_hat(t);
    value += g * b.adv(t);
  }
  EXPECT_LT(RelErr(GradVanilla(b, f.policy).values, vanilla / b.size()), 1e-12);
  EXPECT_LT(RelErr(GradValueBaseline(b, f.policy).values, value / b.size()), 1e-12);
}

// Score term with the fitted residual plus the pathwise term on the mean
// block; Eq 15 adds -(sigma^2) c_i v_i on log_std_i.
TEST(Estimators, SteinEq15PerSampleForm) {
  Rng rng(13);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 80, Rng(14));
  const Vector var = f.policy.stddev().cwiseAbs2();
  Vector sum = Vector::Zero(f.policy.num_params());
  for (int t = 0; t < b.size(); ++t) {
    const Vector s = b.states.col(t), a = b.actions.col(t), xi = b.noises.col(t);
    const double rho = b.adv(t) - f.mlp.Psi(s, a, f.policy)(0);
    const Vector v = f.mlp.ActionGrad(s, a, f.policy).col(0);
    const Vector c = f.policy.ScoreAction(s, a).col(0);
    Vector g = f.policy.ScoreTheta(s, a) * rho + f.policy.ReparamVjp(s, xi, v);
    // ReparamVjp already carries sigma_i xi_i v_i on log_std_i.
    g.tail(2) -= xi.cwiseProduct(f.policy.stddev()).cwiseProduct(v);
    g.tail(2) -= var.cwiseProduct(c).cwiseProduct(v);
    sum += g;
  }
  const GradientEstimate est = GradStein(b, f.policy, f.mlp, SigmaFormula::kEq15);
  EXPECT_LT(RelErr(est.values, sum / b.size()), 1e-12);
  EXPECT_EQ(est.formula, "eq15");
  EXPECT_EQ(est.n_samples, 80);
}

TEST(Estimators, ZeroPsiSteinIsValueBaselineBitwise) {
  Rng rng(15);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 200, Rng(16));
  for (SigmaFormula form : {SigmaFormula::kEq15, SigmaFormula::kEq16})
    EXPECT_EQ(GradStein(b, f.policy, f.value, form).values,
              GradValueBaseline(b, f.policy).values);
}

TEST(Estimators, LinearSteinMeanBlockIsQpropBitwise) {
  Rng rng(17);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 200, Rng(18));
  const int m = f.policy.num_mean_params();
  const Vector q = GradQpropForm(b, f.policy, f.linear).values;
  for (SigmaFormula form : {SigmaFormula::kEq15, SigmaFormula::kEq16})
    EXPECT_EQ(GradStein(b, f.policy, f.linear, form).values.head(m), q.head(m));
  const SteinTerms t = SteinTermsFor(b, f.policy, f.linear, SigmaFormula::kEq16);
  EXPECT_EQ(t.sigma_term.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Estimators, MlpRejectsEq16) {
  Rng rng(19);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 10, Rng(20));
  try {
    GradStein(b, f.policy, f.mlp, SigmaFormula::kEq16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
  }
  EXPECT_THROW(GradQpropForm(b, f.policy, f.mlp), Error);
}

// Every control variate has zero mean, so all estimators agree in expectation
// with the value-baseline estimator over i.i.d. batches.
TEST(Estimators, ControlVariatesAreUnbiased) {
  Rng rng(21);
  const Fixture f = MakeFixture(rng);
  const int batches = 400;
  struct Acc {
    Vector sum, sq;
  };
  std::vector<Acc> acc(4, {Vector::Zero(f.policy.num_params()), Vector::Zero(f.policy.num_params())});
  for (int k = 0; k < batches; ++k) {
    const Batch b = MakeBatch(f, 100, rng.Child({static_cast<std::uint64_t>(k)}));
    const Vector base = GradValueBaseline(b, f.policy).values;
    const Vector d[] = {
        GradStein(b, f.policy, f.mlp, SigmaFormula::kEq15).values - base,
        GradStein(b, f.policy, f.quadratic, SigmaFormula::kEq15).values - base,
        GradStein(b, f.policy, f.quadratic, SigmaFormula::kEq16).values - base,
        GradQpropForm(b, f.policy, f.linear).values - base,
    };
    for (int i = 0; i < 4; ++i) {
      acc[i].sum += d[i];
      acc[i].sq += d[i].cwiseAbs2();
    }
  }
  for (int i = 0; i < 4; ++i) {
    const Vector mean = acc[i].sum / batches;
    const Vector se = ((acc[i].sq / batches - mean.cwiseAbs2()) / (batches - 1)).cwiseSqrt();
    int outside = 0;
    for (Eigen::Index j = 0; j < mean.size(); ++j)
      if (std::abs(mean(j)) > 3.5 * se(j) + 1e-12) ++outside;
    EXPECT_LE(outside, 1) << "estimator " << i;
  }
}

TEST(SteinResidual, SmallForCorrectReparamLargeForMutant) {
  Rng rng(22);
  const Fixture f = MakeFixture(rng);
  const Vector s = rng.NormalVector(4);
  Rng a(23), b(23);
  EXPECT_LT(SteinIdentityResidual(f.policy, f.quadratic, s, 200000, a), 0.05);
  const ReparamFn mutant = [](const GaussianPolicy& p, const MatrixRef& st,
                              const MatrixRef& xi, const MatrixRef& v) {
    return p.ReparamVjp(st, xi, 2.0 * v);
  };
  EXPECT_GT(SteinIdentityResidual(f.policy, f.quadratic, s, 200000, b, mutant), 0.5);
}

TEST(Variance, UnbiasedPerCoordinate) {
  std::vector<Vector> xs;
  for (double v : {1.0, 2.0, 3.0, 4.0}) {
    Vector x(2);
    x << v, 2 * v;
    xs.push_back(x);
  }
  const VarianceSummary s = EstimatorVariance(xs);
  EXPECT_DOUBLE_EQ(s.per_coord(0), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.per_coord(1), 20.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.trace, 25.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.log_trace, std::log(25.0 / 3.0));
}

TEST(Variance, ConstantEstimatesGiveMinusInfinity) {
  const std::vector<Vector> xs(3, Vector::Ones(2));
  EXPECT_EQ(EstimatorVariance(xs).log_trace, -std::numeric_limits<double>::infinity());
  EXPECT_THROW(EstimatorVariance({Vector::Ones(2)}), Error);
}

TEST(SigmaFormula, Names) {
  EXPECT_EQ(ParseSigmaFormula(SigmaFormulaName(SigmaFormula::kEq16)), SigmaFormula::kEq16);
  EXPECT_THROW(ParseSigmaFormula("eq17"), Error);
}

Trajectory FixedTrajectory(std::initializer_list<double> rewards, bool terminal) {
  Trajectory t;
  const int T = static_cast<int>(rewards.size());
  t.states = Matrix::Zero(1, T);
  t.actions = Matrix::Zero(1, T);
  t.noises = Matrix::Zero(1, T);
  t.rewards = Vector::Zero(T);
  int i = 0;
  for (double r : rewards) t.rewards(i++) = r;
  t.final_state = Vector::Zero(1);
  t.terminal = terminal;
  t.truncated = !terminal;
  return t;
}

TEST(Returns, SmallCases) {
  const Trajectory t = FixedTrajectory({1.0, 1.0}, true);
  EXPECT_EQ(McReturns(t, 0.5), (Vector(2) << 1.5, 1.0).finished());
  const Trajectory u = FixedTrajectory({0.3, -2.0, 7.0}, true);
  EXPECT_EQ(McReturns(u, 0.0), u.rewards);
}

TEST(Gae, SmallCases) {
  const Trajectory one = FixedTrajectory({1.0}, true);
  EXPECT_EQ(Gae(one, Vector::Zero(1), 0.0, 0.99, 0.95)(0), 1.0);
  // V chosen so every TD error r + gamma V' - V vanishes.
  const Trajectory t = FixedTrajectory({1.0, 1.0, 1.0}, false);
  const double gamma = 0.5;
  const Vector v = Vector::Constant(3, 2.0);
  EXPECT_EQ(Gae(t, v, 2.0, gamma, 0.9).cwiseAbs().maxCoeff(), 0.0);
}

struct ScalarLinear {
  GaussianPolicy policy;
  EnvModel env;
};

ScalarLinear MakeScalarLinear() {
  ScalarLinear x;
  x.env = EnvModel::ScalarLqr();
  x.policy = GaussianPolicy::Linear(Matrix::Constant(1, 1, 0.5), Vector::Constant(1, -0.5));
  return x;
}

Batch QBatch(const GaussianPolicy& policy, const Matrix& states, const Vector& q_hat,
             const Vector& values, Rng& rng) {
  const auto n = states.cols();
  Matrix actions(policy.action_dim(), n), noises(policy.action_dim(), n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const GaussianPolicy::Draw d = policy.SampleAction(states.col(t), rng);
    actions.col(t) = d.action;
    noises.col(t) = d.noise;
  }
  return BatchFromQ(states, actions, noises, q_hat, values, false);
}

TEST(Estimators, TrivialTargets) {
  Rng rng(40);
  const ScalarLinear x = MakeScalarLinear();
  const Matrix s = Matrix::Random(1, 20);
  const Batch zero = QBatch(x.policy, s, Vector::Zero(20), Vector::Zero(20), rng);
  EXPECT_EQ(GradVanilla(zero, x.policy).values.cwiseAbs().maxCoeff(), 0.0);

  const Batch single = QBatch(x.policy, s.leftCols(1), Vector::Constant(1, 2.5),
                              Vector::Zero(1), rng);
  const Vector expected = x.policy.ScoreTheta(single.states.col(0), single.actions.col(0)) * 2.5;
  EXPECT_LT(RelErr(GradVanilla(single, x.policy).values, expected), 1e-15);

  const Vector q = Vector::Random(20);
  const Batch no_value = QBatch(x.policy, s, q, Vector::Zero(20), rng);
  EXPECT_EQ(GradValueBaseline(no_value, x.policy).values, GradVanilla(no_value, x.policy).values);
  const Batch no_adv = QBatch(x.policy, s, q, q, rng);
  EXPECT_EQ(GradValueBaseline(no_adv, x.policy).values.cwiseAbs().maxCoeff(), 0.0);
}

// Against the exact conditional gradient at fixed states, with Q-hat from the
// closed-form LQR action value.
TEST(Estimators, VanillaMatchesExactGradientOnLqr) {
  Rng rng(41);
  const ScalarLinear x = MakeScalarLinear();
  const LqrValue oracle = LqrOracle(x.env, x.policy.gain(), x.policy.stddev());
  const int n = 200, batches = 200;
  const Matrix s = 2.0 * Matrix::Random(1, n);
  const double var = x.policy.stddev()(0) * x.policy.stddev()(0);
  const Matrix mu = x.policy.Mean(s);
  Matrix upstream(1, n);
  for (int t = 0; t < n; ++t)
    upstream(0, t) = 2.0 * oracle.Msa(0, 0) * s(0, t) + 2.0 * oracle.Maa(0, 0) * mu(0, t);
  Vector exact(x.policy.num_params());
  exact << x.policy.mean_net().ParamGrad(s, upstream) / n, 2.0 * oracle.Maa(0, 0) * var;

  Vector sum = Vector::Zero(exact.size()), sq = Vector::Zero(exact.size());
  for (int k = 0; k < batches; ++k) {
    Batch b = QBatch(x.policy, s, Vector::Zero(n), Vector::Zero(n), rng);
    for (int t = 0; t < n; ++t) b.q_hat(t) = oracle.Q(b.states.col(t), b.actions.col(t));
    const Vector g = GradVanilla(b, x.policy).values;
    sum += g;
    sq += g.cwiseAbs2();
  }
  const Vector mean = sum / batches;
  const Vector se = ((sq / batches - mean.cwiseAbs2()) / (batches - 1)).cwiseSqrt();
  for (Eigen::Index j = 0; j < exact.size(); ++j)
    EXPECT_LT(std::abs(mean(j) - exact(j)), 3.0 * se(j)) << "coordinate " << j;
}

TEST(Estimators, ReparamWithValueBaselineIsZero) {
  Rng rng(42);
  const Fixture f = MakeFixture(rng);
  const Batch b = MakeBatch(f, 50, rng);
  EXPECT_EQ(GradReparam(b, f.policy, f.value).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Estimators, ReparamMatchesFdOfMeanPhi) {
  Rng rng(43);
  const Fixture f = MakeFixture(rng);
  const Matrix s = Matrix::Random(4, 6), xi = Matrix::Random(2, 6);
  const Batch b = BatchFromQ(s, f.policy.Act(s, xi), xi, Vector::Zero(6), Vector::Zero(6), false);
  for (const Baseline* base : {&f.quadratic, &f.mlp}) {
    const auto objective = [&](const Vector& th) {
      const GaussianPolicy p = f.policy.WithParams(th);
      return base->Phi(s, p.Act(s, xi), f.policy).mean();
    };
    EXPECT_LT(RelErr(GradReparam(b, f.policy, *base).values,
                     testing::FdGradient(objective, f.policy.Params())),
              1e-7)
        << BaselineKindName(base->kind());
  }
}

TEST(Estimators, QpropWithFlatCriticIsValue) {
  Rng rng(44);
  Fixture f = MakeFixture(rng);
  f.linear.SetPsiParams(Vector::Zero(f.linear.num_psi_params()));
  const Batch b = MakeBatch(f, 64, rng);
  EXPECT_EQ(GradQpropForm(b, f.policy, f.linear).values, GradValueBaseline(b, f.policy).values);
}

TEST(Variance, MeanOfUnitNormalsHasTraceOneOverM) {
  Rng rng(45);
  const int m = 25;
  std::vector<Vector> estimates;
  for (int k = 0; k < 2000; ++k) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) sum += rng.Normal();
    estimates.push_back(Vector::Constant(1, sum / m));
  }
  EXPECT_NEAR(EstimatorVariance(estimates).trace, 1.0 / m, 0.2 / m);
}

TEST(Variance, TwoSamples) {
  Vector x(3), y(3);
  x << 1.0, -2.0, 0.5;
  y << 4.0, 2.0, 0.5;
  const VarianceSummary v = EstimatorVariance({x, y});
  EXPECT_EQ(v.per_coord, ((x - y).cwiseAbs2() / 2.0).eval());
  EXPECT_DOUBLE_EQ(v.trace, (9.0 + 16.0) / 2.0);
}

}  // namespace
}  // namespace steincv
