#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "stein_cv/diffnet.hpp"
#include "stein_cv/error.hpp"
#include "stein_cv/rng.hpp"
#include "test_util.hpp"

namespace steincv {
namespace {

using testing::FdGradient;
using testing::RelErr;

DenseNet SmoothNet(int in, int out, Rng& rng) {
  const int hidden[] = {6, 5};
  DenseNet net = DenseNet::Create(in, hidden, out, Activation::kTanh,
                                  Activation::kIdentity, rng);
  net.Unflatten(testing::RandomParams(net.num_params(), rng, 0.6));
  return net;
}

TEST(DenseNet, ShapesAndParamCount) {
  Rng rng(1);
  const int hidden[] = {4};
  const DenseNet net = DenseNet::Create(3, hidden, 2, Activation::kRelu,
                                        Activation::kIdentity, rng);
  EXPECT_EQ(net.input_dim(), 3);
  EXPECT_EQ(net.output_dim(), 2);
  EXPECT_EQ(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
  EXPECT_EQ(net.Forward(Matrix::Zero(3, 7)).cols(), 7);
}

TEST(DenseNet, XavierBoundsAndZeroBias) {
  Rng rng(2);
  const int hidden[] = {30};
  const DenseNet net = DenseNet::Create(10, hidden, 20, Activation::kRelu,
                                        Activation::kIdentity, rng);
  for (const DenseLayer& l : net.layers()) {
    const double bound = std::sqrt(6.0 / (l.in_dim() + l.out_dim()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(DenseNet, FlattenOrderIsRowMajorThenBias) {
  DenseLayer l;
  l.weight.resize(2, 3);
  l.weight << 1, 2, 3, 4, 5, 6;
  l.bias.resize(2);
  l.bias << 7, 8;
  const DenseNet net({l});
  Vector expected(8);
  expected << 1, 2, 3, 4, 5, 6, 7, 8;
  EXPECT_EQ(net.Flatten(), expected);
}

TEST(DenseNet, FlattenRoundTrip) {
  Rng rng(3);
  const DenseNet net = SmoothNet(3, 2, rng);
  DenseNet copy = net.WithParams(Vector::Zero(net.num_params()));
  copy.Unflatten(net.Flatten());
  EXPECT_TRUE(copy == net);
}

TEST(DenseNet, TanhMatchesStd) {
  DenseLayer l;
  l.weight = Matrix::Identity(1, 1);
  l.bias = Vector::Zero(1);
  l.activation = Activation::kTanh;
  const DenseNet net({l});
  Matrix x(1, 2001);
  for (int i = 0; i < 2001; ++i) x(0, i) = -25.0 + 0.025 * i;
  const Matrix y = net.Forward(x);
  for (int i = 0; i < 2001; ++i) EXPECT_NEAR(y(0, i), std::tanh(x(0, i)), 1e-15);
}

TEST(DenseNet, ReluForwardByHand) {
  DenseLayer l;
  l.weight.resize(2, 1);
  l.weight << 1, -1;
  l.bias = Vector::Zero(2);
  l.activation = Activation::kRelu;
  const DenseNet net({l});
  Matrix x(1, 1);
  x << 2.0;
  EXPECT_EQ(net.Forward(x)(0, 0), 2.0);
  EXPECT_EQ(net.Forward(x)(1, 0), 0.0);
}

TEST(DenseNet, ParamGradMatchesFd) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseNet net = SmoothNet(3, 2, rng);
    const Matrix x = Matrix::Random(3, 4);
    const Matrix u = Matrix::Random(2, 4);
    const auto f = [&](const Vector& p) {
      return (u.array() * net.WithParams(p).Forward(x).array()).sum();
    };
    EXPECT_LT(RelErr(net.ParamGrad(x, u), FdGradient(f, net.Flatten())), 1e-7);
  }
}

TEST(DenseNet, InputGradMatchesFd) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseNet net = SmoothNet(3, 2, rng);
    const Vector x = rng.NormalVector(3);
    const Vector u = rng.NormalVector(2);
    const auto f = [&](const Vector& xx) { return u.dot(net.Forward(xx).col(0)); };
    EXPECT_LT(RelErr(net.InputGrad(x, u).col(0), FdGradient(f, x)), 1e-7);
  }
}

TEST(DenseNet, JvpMatchesFdOfGradients) {
  Rng rng(6);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const DenseNet net = SmoothNet(3, 2, rng);
    const Vector x = rng.NormalVector(3);
    const Vector t = rng.NormalVector(3);
    const Vector u = rng.NormalVector(2);
    const NetJvp j = net.Jvp(x, t, u);
    const Vector xp = x + h * t, xm = x - h * t;
    EXPECT_LT(RelErr(j.output.col(0), net.Forward(x).col(0)), 1e-15);
    EXPECT_LT(RelErr(j.output_tangent.col(0),
                     (net.Forward(xp) - net.Forward(xm)).col(0) / (2 * h)), 1e-7);
    EXPECT_LT(RelErr(j.input_grad.col(0), net.InputGrad(x, u).col(0)), 1e-15);
    EXPECT_LT(RelErr(j.dir_input_grad.col(0),
                     (net.InputGrad(xp, u) - net.InputGrad(xm, u)).col(0) / (2 * h)), 1e-6);
    EXPECT_LT(RelErr(j.dir_param_grad,
                     (net.ParamGrad(xp, u) - net.ParamGrad(xm, u)) / (2 * h)), 1e-6);
  }
}

TEST(DenseNet, BatchGradientIsSumOfColumns) {
  Rng rng(7);
  const DenseNet net = SmoothNet(2, 1, rng);
  const Matrix x = Matrix::Random(2, 5);
  const Matrix u = Matrix::Random(1, 5);
  Vector sum = Vector::Zero(net.num_params());
  for (int c = 0; c < 5; ++c) sum += net.ParamGrad(x.col(c), u.col(c));
  EXPECT_LT(RelErr(net.ParamGrad(x, u), sum), 1e-14);
}

TEST(DenseNet, RejectsWrongInputSize) {
  Rng rng(8);
  const DenseNet net = SmoothNet(3, 1, rng);
  try {
    net.Forward(Matrix::Zero(2, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }
}

TEST(DenseNet, ActivationNames) {
  for (Activation a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh})
    EXPECT_EQ(ParseActivation(ActivationName(a)), a);
  EXPECT_THROW(ParseActivation("sigmoid"), Error);
}

TEST(ConcatNet, GradientsMatchFd) {
  Rng rng(9);
  ConcatNet net = ConcatNet::Create(3, 2, 6, Activation::kTanh, rng);
  net.Unflatten(testing::RandomParams(net.num_params(), rng, 0.6));
  const Vector s = rng.NormalVector(3);
  const Vector a = rng.NormalVector(2);
  const Vector u = Vector::Ones(1);
  const auto [gs, ga] = net.InputGrad(s, a, u);
  EXPECT_LT(RelErr(gs.col(0), FdGradient([&](const Vector& x) {
                     return net.Forward(x, a)(0, 0);
                   }, s)), 1e-7);
  EXPECT_LT(RelErr(ga.col(0), FdGradient([&](const Vector& x) {
                     return net.Forward(s, x)(0, 0);
                   }, a)), 1e-7);
  const Vector p = net.Flatten();
  const auto fp = [&](const Vector& q) {
    ConcatNet c = net;
    c.Unflatten(q);
    return c.Forward(s, a)(0, 0);
  };
  EXPECT_LT(RelErr(net.ParamGrad(s, a, u), FdGradient(fp, p)), 1e-7);
}

TEST(ConcatNet, JvpMatchesFd) {
  Rng rng(10);
  ConcatNet net = ConcatNet::Create(2, 2, 5, Activation::kTanh, rng);
  net.Unflatten(testing::RandomParams(net.num_params(), rng, 0.6));
  const Vector s = rng.NormalVector(2), a = rng.NormalVector(2);
  const Vector ts = rng.NormalVector(2), ta = rng.NormalVector(2);
  const Vector u = Vector::Ones(1);
  const double h = 1e-5;
  const auto j = net.Jvp(s, a, ts, ta, u);
  const auto up = net.InputGrad(s + h * ts, a + h * ta, u);
  const auto down = net.InputGrad(s - h * ts, a - h * ta, u);
  EXPECT_LT(RelErr(j.dir_trail_grad.col(0), (up.second - down.second).col(0) / (2 * h)),
            1e-6);
  EXPECT_LT(RelErr(j.dir_lead_grad.col(0), (up.first - down.first).col(0) / (2 * h)), 1e-6);
  const Vector pg = (net.ParamGrad(s + h * ts, a + h * ta, u) -
                     net.ParamGrad(s - h * ts, a - h * ta, u)) / (2 * h);
  EXPECT_LT(RelErr(j.dir_param_grad, pg), 1e-6);
}

TEST(DenseNet, ZeroWeightsGiveBias) {
  DenseLayer l;
  l.weight = Matrix::Zero(2, 3);
  l.bias = Vector::Zero(2);
  l.bias << 0.5, -1.5;
  const DenseNet net({l});
  Rng rng(11);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(net.Forward(rng.NormalVector(3)).col(0), l.bias);
}

TEST(DenseNet, AffineArithmetic) {
  DenseLayer l;
  l.weight = Matrix::Constant(1, 1, 2.0);
  l.bias = Vector::Constant(1, 1.0);
  const DenseNet net({l});
  EXPECT_EQ(net.Forward(Vector::Constant(1, 3.0))(0, 0), 7.0);
}

TEST(DenseNet, ReluNetMatchesHandCodedEvaluation) {
  Rng rng(12);
  const int hidden[] = {5};
  DenseNet net = DenseNet::Create(3, hidden, 2, Activation::kRelu, Activation::kIdentity, rng);
  net.Unflatten(testing::RandomParams(net.num_params(), rng, 0.8));
  const Vector p = net.Flatten();
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = rng.NormalVector(3);
    // Straight-line evaluation from the flat parameter vector.
    int k = 0;
    double h[5];
    for (int i = 0; i < 5; ++i) {
      double z = 0.0;
      for (int j = 0; j < 3; ++j) z += p(k + 3 * i + j) * x(j);
      h[i] = z;
    }
    k += 15;
    for (int i = 0; i < 5; ++i) h[i] = std::max(0.0, h[i] + p(k + i));
    k += 5;
    const Vector y = net.Forward(x).col(0);
    for (int o = 0; o < 2; ++o) {
      double z = p(k + 10 + o);
      for (int i = 0; i < 5; ++i) z += p(k + 5 * o + i) * h[i];
      EXPECT_NEAR(y(o), z, 1e-14);
    }
  }
}

TEST(DenseNet, SingleLayerGradients) {
  DenseLayer l;
  l.weight.resize(1, 3);
  l.weight << 0.5, -2.0, 4.0;
  l.bias = Vector::Constant(1, 0.3);
  const DenseNet net({l});
  Vector x(3);
  x << 1.0, 2.0, 3.0;
  const Vector one = Vector::Ones(1);
  Vector expected(4);
  expected << x, 1.0;
  EXPECT_EQ(net.ParamGrad(x, one), expected);
  EXPECT_EQ(net.InputGrad(x, one).col(0), l.weight.transpose());
  EXPECT_EQ(net.ParamGrad(x, Vector::Zero(1)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DenseNet, DeadReluRegionHasZeroInputGrad) {
  DenseLayer hidden_layer, out;
  hidden_layer.weight = Matrix::Ones(3, 2);
  hidden_layer.bias = Vector::Constant(3, -10.0);
  hidden_layer.activation = Activation::kRelu;
  out.weight = Matrix::Ones(1, 3);
  out.bias = Vector::Zero(1);
  const DenseNet net({hidden_layer, out});
  EXPECT_EQ(net.InputGrad(Vector::Ones(2), Vector::Ones(1)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DenseNet, LinearNetHasZeroCurvatureAndZeroTangentGivesZero) {
  Rng rng(13);
  const int hidden[] = {4};
  DenseNet linear = DenseNet::Create(3, hidden, 2, Activation::kIdentity,
                                     Activation::kIdentity, rng);
  const Vector x = rng.NormalVector(3), t = rng.NormalVector(3), u = rng.NormalVector(2);
  const NetJvp j = linear.Jvp(x, t, u);
  EXPECT_EQ(j.dir_input_grad.cwiseAbs().maxCoeff(), 0.0);
  const DenseNet smooth = SmoothNet(3, 2, rng);
  const NetJvp z = smooth.Jvp(x, Vector::Zero(3), u);
  EXPECT_EQ(z.dir_input_grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(z.dir_param_grad.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(z.output_tangent.cwiseAbs().maxCoeff(), 0.0);
}

}  // namespace
}  // namespace steincv
