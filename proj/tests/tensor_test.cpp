#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cianet/ops.hpp"
#include "support/gradient_suite.hpp"

using namespace cianet;

namespace {

Tensor<double> ramp(Shape s) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = double(i % 17) - 8.0 + 0.25 * double(i % 5);
  return t;
}

template <class F>
std::string axis_of(F&& f) {
  try {
    f();
  } catch (const DimensionError& e) {
    return e.axis();
  }
  return "<none>";
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndWrongBufferLength) {
  EXPECT_THROW(Tensor<float>(Shape{1, 0, 2, 2}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_EQ(Tensor<float>(Shape{2, 3, 4, 5}).numel(), 120u);
}

TEST(Conv2d, AllOnesWindowSumsToNine) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  const Var w = t.leaf(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  const auto& y = t.value(conv2d(t, x, w, std::nullopt, 1, 1));
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Shape s{2, 3, std::size_t(5 + rep % 4), std::size_t(4 + rep % 3)};
    Tensor<double> w(Shape{3, 3, 3, 3}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;
    Tape<double> t;
    const Tensor<double> xv = check::random_tensor(s, rng);
    const Var y = conv2d(t, t.leaf(xv), t.leaf(w), std::nullopt, 1, 1);
    EXPECT_EQ(t.value(y), xv);
  }
}

TEST(Conv2d, OutputShapeAndChannelMismatch) {
  Tape<float> t;
  const Var x = t.leaf(Tensor<float>(Shape{1, 3, 8, 8}));
  const Var w = t.leaf(Tensor<float>(Shape{16, 3, 3, 3}));
  EXPECT_EQ(t.shape(conv2d(t, x, w, std::nullopt, 1, 1)), (Shape{1, 16, 8, 8}));
  const Var w2 = t.leaf(Tensor<float>(Shape{16, 4, 3, 3}));
  EXPECT_EQ(axis_of([&] { conv2d(t, x, w2, std::nullopt, 1, 1); }), "C");
}

TEST(AvgPool, WindowMeanShapeAndOddInput) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(t.value(avg_pool2d(t, x))[0], 2.5);
  const Var c = t.leaf(Tensor<double>(Shape{1, 2, 4, 4}, 3.5));
  const auto& y = t.value(avg_pool2d(t, c));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (double v : y.vec()) EXPECT_EQ(v, 3.5);
  const Var odd = t.leaf(Tensor<double>(Shape{1, 1, 3, 4}));
  EXPECT_EQ(axis_of([&] { avg_pool2d(t, odd); }), "H");
}

TEST(Upsample, HalfPixelRowAndShape) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1, 2}));
  const auto& y = t.value(bilinear_upsample2x(t, x));
  EXPECT_EQ(y.vec(), (std::vector<double>{1, 1.25, 1.75, 2, 1, 1.25, 1.75, 2}));
  EXPECT_EQ(t.shape(bilinear_upsample2x(t, t.leaf(Tensor<double>(Shape{1, 4, 8, 8})))), (Shape{1, 4, 16, 16}));
}

TEST(Upsample, ConstantInputStaysConstant) {
  Tape<double> t;
  const auto& y = t.value(bilinear_upsample2x(t, t.leaf(Tensor<double>(Shape{2, 3, 5, 7}, -0.375))));
  for (double v : y.vec()) EXPECT_EQ(v, -0.375);
}

TEST(BatchNorm, ConstantInputGivesShift) {
  Tape<double> t;
  RunningStats<double> stats(2);
  const Var x = t.leaf(Tensor<double>(Shape{2, 2, 3, 3}, 4.0));
  const Var g = t.leaf(Tensor<double>(Shape{1, 2, 1, 1}, 1.7));
  const Var b = t.leaf(Tensor<double>(Shape{1, 2, 1, 1}, {0.5, -1.5}));
  const auto& y = t.value(batch_norm(t, x, g, b, stats, Mode::train));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_EQ(y.plane_ptr(n, 0)[i], 0.5);
      EXPECT_EQ(y.plane_ptr(n, 1)[i], -1.5);
    }
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  std::mt19937_64 rng(5);
  Tape<double> t;
  RunningStats<double> stats(3);
  const Tensor<double> xv = check::random_tensor(Shape{4, 3, 5, 5}, rng, 3.0);
  const Var y = batch_norm(t, t.leaf(xv), t.leaf(Tensor<double>(Shape{1, 3, 1, 1}, 1.0)),
                           t.leaf(Tensor<double>(Shape{1, 3, 1, 1}, 0.0)), stats, Mode::train);
  const auto& yv = t.value(y);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0, xm = 0, xv2 = 0;
    const double n = 4 * 25;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 25; ++i) {
        m += yv.plane_ptr(k, c)[i];
        xm += xv.plane_ptr(k, c)[i];
      }
    m /= n;
    xm /= n;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 25; ++i) {
        v += (yv.plane_ptr(k, c)[i] - m) * (yv.plane_ptr(k, c)[i] - m);
        xv2 += (xv.plane_ptr(k, c)[i] - xm) * (xv.plane_ptr(k, c)[i] - xm);
      }
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / n, 1.0, 1e-5);
    EXPECT_NEAR(stats.mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * xv2 / (n - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
  std::mt19937_64 rng(6);
  Tape<double> t;
  const RunningStats<double> stats(2);
  const Tensor<double> xv = check::random_tensor(Shape{1, 2, 3, 4}, rng);
  const auto& y = t.value(batch_norm(t, t.leaf(xv), t.leaf(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)),
                                     t.leaf(Tensor<double>(Shape{1, 2, 1, 1}, 0.0)), stats, Mode::eval));
  for (std::size_t i = 0; i < xv.numel(); ++i) EXPECT_NEAR(y[i], xv[i], 1e-5 * std::abs(xv[i]) + 1e-12);
}

TEST(Activation, ReluAndSigmoidValues) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 3}, {-1, 2, 0}));
  EXPECT_EQ(t.value(relu(t, x)).vec(), (std::vector<double>{0, 2, 0}));
  const Var z = t.leaf(Tensor<double>::scalar(0.0));
  const Var s = sigmoid(t, z);
  EXPECT_EQ(t.value(s)[0], 0.5);
  const auto g = t.backward(s);
  EXPECT_EQ(g.at(z)[0], 0.25);
}

TEST(Activation, SigmoidStaysStrictlyInsideUnitInterval) {
  Tape<float> t;
  const auto& y = t.value(sigmoid(t, t.leaf(Tensor<float>(Shape{1, 1, 1, 4}, {-200.f, -30.f, 30.f, 200.f}))));
  for (float v : y.vec()) {
    EXPECT_GT(v, 0.f);
    EXPECT_LT(v, 1.f);
  }
}

TEST(Concat, ChannelCountsSingleInputAndSplit) {
  std::mt19937_64 rng(8);
  Tape<double> t;
  const Var a = t.leaf(check::random_tensor(Shape{2, 16, 3, 3}, rng));
  const Var b = t.leaf(check::random_tensor(Shape{2, 16, 3, 3}, rng));
  const Var ab = concat_channels(t, {a, b});
  EXPECT_EQ(t.shape(ab).c, 32u);
  EXPECT_EQ(t.value(concat_channels(t, {a})), t.value(a));
  EXPECT_EQ(t.value(slice_channels(t, ab, 0, 16)), t.value(a));
  EXPECT_EQ(t.value(slice_channels(t, ab, 16, 16)), t.value(b));
  const Var c = t.leaf(Tensor<double>(Shape{2, 1, 4, 3}));
  EXPECT_EQ(axis_of([&] { concat_channels(t, {a, c}); }), "H");
}

TEST(Concat, BackwardOfSumIsAllOnes) {
  Tape<double> t;
  const Var a = t.leaf(ramp(Shape{1, 2, 2, 2}));
  const Var b = t.leaf(ramp(Shape{1, 3, 2, 2}));
  const auto g = t.backward(sum(t, concat_channels(t, {a, b})));
  for (double v : g.at(a).vec()) EXPECT_EQ(v, 1.0);
  for (double v : g.at(b).vec()) EXPECT_EQ(v, 1.0);
}

TEST(Elementwise, IdentitiesAndMulGradient) {
  Tape<double> t;
  const Tensor<double> xv = ramp(Shape{1, 2, 3, 3});
  const Var x = t.leaf(xv);
  EXPECT_EQ(t.value(add(t, x, t.leaf(Tensor<double>(xv.shape(), 0.0)))), xv);
  for (double v : t.value(sub(t, x, x)).vec()) EXPECT_EQ(v, 0.0);
  const Var y = t.leaf(ramp(Shape{1, 2, 3, 3}).cast<double>());
  const auto g = t.backward(sum(t, mul(t, x, y)));
  EXPECT_EQ(g.at(x), t.value(y));
  Tape<double> t2;
  EXPECT_THROW(add(t2, t2.leaf(Tensor<double>(Shape{1, 1, 2, 2})), t2.leaf(Tensor<double>(Shape{1, 2, 2, 2}))),
               DimensionError);
}

TEST(Backward, ReluSumGradient) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 2}, {-1, 2}));
  const auto g = t.backward(sum(t, relu(t, x)));
  EXPECT_EQ(g.at(x).vec(), (std::vector<double>{0, 1}));
}

TEST(Backward, FanOutContributionsAdd) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 2}, {3, -2}));
  const Var y = mul(t, x, x);
  const auto g = t.backward(sum(t, add(t, y, y)));
  EXPECT_EQ(g.at(x).vec(), (std::vector<double>{12, -8}));
}

TEST(Backward, RequiresScalarAndRunsOnce) {
  Tape<double> t;
  const Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1, 2}));
  EXPECT_THROW(t.backward(relu(t, x)), ContractError);
  Tape<double> t2;
  const Var s = sum(t2, t2.leaf(Tensor<double>(Shape{1, 1, 1, 2}, {1, 2})));
  t2.backward(s);
  EXPECT_THROW(t2.backward(s), ContractError);
}

TEST(Determinism, RepeatedForwardIsBitwiseEqual) {
  std::mt19937_64 rng(9);
  const Tensor<float> xv = check::random_tensor(Shape{2, 5, 12, 12}, rng).cast<float>();
  const Tensor<float> wv = check::random_tensor(Shape{7, 5, 3, 3}, rng).cast<float>();
  auto run = [&] {
    Tape<float> t;
    return t.value(bilinear_upsample2x(t, avg_pool2d(t, conv2d(t, t.leaf(xv), t.leaf(wv), std::nullopt, 1, 1))));
  };
  EXPECT_EQ(run(), run());
}

TEST(Nmap, RoundTripAndMalformedInput) {
  std::mt19937_64 rng(10);
  const Tensor<float> v = check::random_tensor(Shape{1, 2, 3, 4}, rng).cast<float>();
  std::stringstream ss;
  nmap::write(ss, v);
  std::size_t off = 0;
  EXPECT_EQ(nmap::read(ss, "mem", off), v);
  EXPECT_EQ(off, 4u + 16u + 4u * 24u);

  std::string bytes = ss.str();
  std::stringstream bad_magic("XMAP" + bytes.substr(4));
  off = 0;
  EXPECT_THROW(nmap::read(bad_magic, "mem", off), ParseError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  off = 0;
  try {
    nmap::read(truncated, "map.nmap", off);
    FAIL() << "truncated map accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.file(), "map.nmap");
    EXPECT_EQ(e.offset(), 4u + 16u + 4u * 23u);
  }
  std::string huge = bytes.substr(0, 4) + std::string("\xff\xff\x00\x00\xff\xff\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00", 16);
  std::stringstream hs(huge);
  off = 0;
  EXPECT_THROW(nmap::read(hs, "mem", off), ParseError);
}

TEST(Gradients, EveryOpMatchesCentralDifferences) {
  for (const auto& r : check::op_gradient_suite(2024, 100)) {
    EXPECT_GE(r.cases, 100) << r.op;
    EXPECT_EQ(r.failures, 0) << r.op << ": " << r.first_failure << " (worst rel " << r.worst << ")";
  }
}
