#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "cianet/model.hpp"
#include "support/gradient_suite.hpp"

using namespace cianet;

namespace {

// Trainable scalar count written out layer by layer from the architecture
// description, independently of build().
std::size_t expected_parameters(const CIANetConfig& c) {
  const std::size_t k = c.growth_rate, d = c.decoder_width;
  std::size_t n = c.stem_channels * 3 * 49 + 2 * c.stem_channels;
  std::size_t ch = c.stem_channels;
  std::size_t enc[4];
  for (int b = 0; b < 4; ++b) {
    for (int l = 0; l < c.block_sizes[b]; ++l) {
      n += 2 * ch + 4 * k * ch + 2 * 4 * k + k * 4 * k * 9;
      ch += k;
    }
    enc[b] = ch;
    if (b < 3) {
      const std::size_t out = std::size_t(c.compression * double(ch));
      n += 2 * ch + out * ch;
      ch = out;
    }
  }
  std::size_t branch = d * enc[3] * 9 + d;
  for (int lvl = 1; lvl <= 3; ++lvl) {
    branch += d * enc[3 - lvl] + d;  // lateral
    branch += d * d * 9 + d;         // smooth
    branch += d + 1;                 // classifier
    if (c.use_iam && lvl < 3) branch += d * 2 * d * 9 + d;
  }
  return n + 2 * branch;
}

Tensor<double> input(std::size_t n, std::size_t hw, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return check::random_tensor(Shape{n, 3, hw, hw}, rng);
}

struct Pass {
  Tape<double> tape;
  std::unique_ptr<BoundParams<double>> vars;
  ForwardOutputs out;
};

void forward(Pass& r, const CIANetParams<double>& p, const Tensor<double>& x, Mode mode, bool grad) {
  r.vars = std::make_unique<BoundParams<double>>(r.tape, p.store, grad);
  const Var in = r.tape.leaf(x, false);
  r.out = CIANet<double>(r.tape, p, *r.vars, mode).forward(in);
}

}  // namespace

TEST(Model, OutputShapesPerLevel) {
  const auto p = build<double>(CIANetConfig::toy(), 1);
  Pass r;
  forward(r, p, input(2, 64, 2), Mode::train, false);
  const std::size_t sides[] = {8, 16, 32};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(r.tape.shape(r.out.aux[l].nuclei), (Shape{2, 1, sides[l], sides[l]}));
    EXPECT_EQ(r.tape.shape(r.out.aux[l].contour), (Shape{2, 1, sides[l], sides[l]}));
  }
  EXPECT_EQ(r.tape.shape(r.out.final.nuclei), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(r.out.levels().size(), 4u);
}

TEST(Model, ParameterCountMatchesLayerArithmetic) {
  for (bool iam : {true, false}) {
    CIANetConfig c = CIANetConfig::toy();
    c.use_iam = iam;
    EXPECT_EQ(build<float>(c, 3).store.scalar_count(), expected_parameters(c)) << "iam " << iam;
  }
  CIANetConfig c;
  c.growth_rate = 4;
  c.block_sizes = {1, 3, 0, 2};
  c.stem_channels = 6;
  c.compression = 0.75;
  c.decoder_width = 5;
  EXPECT_EQ(build<float>(c, 3).store.scalar_count(), expected_parameters(c));
}

TEST(Model, DenseModuleChannelCounts) {
  const CIANetConfig c = CIANetConfig::toy();
  const auto enc = encoder_channels(c);
  EXPECT_EQ(enc[0], 16 + 16);
  EXPECT_EQ(enc[1], 16 + 16);
  EXPECT_EQ(enc[2], 16 + 16);
  EXPECT_EQ(enc[3], 16 + 16);
  const auto p = build<double>(c, 4);
  Pass r;
  Tape<double>& t = r.tape;
  const BoundParams<double> vars(t, p.store, false);
  const CIANet<double> net(t, p, vars, Mode::eval);
  std::mt19937_64 rng(5);
  const Var stem = t.leaf(check::random_tensor(Shape{1, 16, 8, 8}, rng), false);
  EXPECT_EQ(t.shape(net.dense_module(stem, 0)).c, std::size_t(enc[0]));
}

TEST(Model, BuildRejectsWrongBlockCount) {
  CIANetConfig c;
  c.block_sizes = {2, 2, 2};
  EXPECT_THROW(build<float>(c, 1), ConfigError);
  c.block_sizes = {2, 2, 2, 2, 2};
  EXPECT_THROW(build<float>(c, 1), ConfigError);
}

TEST(Model, BuildIsDeterministicPerSeed) {
  const auto a = build<float>(CIANetConfig::toy(), 7), b = build<float>(CIANetConfig::toy(), 7);
  const auto c = build<float>(CIANetConfig::toy(), 8);
  EXPECT_TRUE(a.store == b.store);
  EXPECT_FALSE(a.store == c.store);
}

TEST(Model, ZeroClassifierGivesOneHalf) {
  auto p = build<double>(CIANetConfig::toy(), 9);
  for (const char* br : kBranches)
    for (int l = 1; l <= 3; ++l) {
      const std::string n = std::string("dec.") + br + ".cls" + std::to_string(l);
      for (auto& v : p.store.get(n + ".w").vec()) v = 0;
      for (auto& v : p.store.get(n + ".b").vec()) v = 0;
    }
  const auto pred = predict(p, input(1, 32, 10));
  for (double v : pred.nuclei.vec()) EXPECT_EQ(v, 0.5);
  for (double v : pred.contour.vec()) EXPECT_EQ(v, 0.5);
}

TEST(Model, EvalIsRepeatableAndStrictlyProbabilistic) {
  const auto p = build<double>(CIANetConfig::toy(), 11);
  const auto x = input(2, 32, 12);
  const auto a = predict(p, x), b = predict(p, x);
  EXPECT_EQ(a.nuclei, b.nuclei);
  EXPECT_EQ(a.contour, b.contour);
  for (double v : a.nuclei.vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Model, RejectsInputsNotDivisibleBy16) {
  const auto p = build<double>(CIANetConfig::toy(), 1);
  std::mt19937_64 rng(1);
  Pass r;
  EXPECT_THROW(forward(r, p, check::random_tensor(Shape{1, 3, 24, 32}, rng), Mode::eval, false), DimensionError);
}

TEST(Model, AggregationCouplesTheBranches) {
  const auto x = input(1, 32, 13);
  for (bool iam : {true, false}) {
    CIANetConfig c = CIANetConfig::toy();
    c.use_iam = iam;
    const auto p = build<double>(c, 14);
    Pass r;
    forward(r, p, x, Mode::train, true);
    const auto g = r.tape.backward(sum(r.tape, r.out.final.nuclei));
    double coupled = 0;
    for (std::size_t i = 0; i < p.store.size(); ++i) {
      if (p.store.name(i).rfind("dec.con.", 0) != 0) continue;
      if (!g.has(r.vars->at(i))) continue;
      for (double v : g.at(r.vars->at(i)).vec()) coupled += std::abs(v);
    }
    if (iam)
      EXPECT_GT(coupled, 0.0);
    else
      EXPECT_EQ(coupled, 0.0);
  }
}

TEST(Model, NoAggregationNucleiIgnoreContourDecoder) {
  CIANetConfig c = CIANetConfig::toy();
  c.use_iam = false;
  auto p = build<double>(c, 15);
  const auto x = input(1, 32, 16);
  const auto before = predict(p, x);
  std::mt19937_64 rng(17);
  for (std::size_t i = 0; i < p.store.size(); ++i)
    if (p.store.name(i).rfind("dec.con.", 0) == 0) p.store.at(i) = check::random_tensor(p.store.at(i).shape(), rng);
  const auto after = predict(p, x);
  EXPECT_EQ(before.nuclei, after.nuclei);
  EXPECT_NE(before.contour, after.contour);
}

TEST(Model, EndToEndGradientMatchesCentralDifferences) {
  CIANetConfig c = CIANetConfig::toy();
  const auto base = build<double>(c, 18);
  const auto x = input(1, 32, 19);
  std::mt19937_64 rng(20);
  std::vector<Tensor<double>> proj;
  {
    Pass r;
    forward(r, base, x, Mode::train, false);
    for (const auto& l : r.out.levels()) {
      proj.push_back(check::random_tensor(r.tape.shape(l.nuclei), rng));
      proj.push_back(check::random_tensor(r.tape.shape(l.contour), rng));
    }
  }
  auto scalar = [&](Pass& r) {
    std::vector<Var> terms;
    std::size_t k = 0;
    for (const auto& l : r.out.levels()) {
      terms.push_back(sum(r.tape, mul(r.tape, l.nuclei, r.tape.leaf(proj[k++], false))));
      terms.push_back(sum(r.tape, mul(r.tape, l.contour, r.tape.leaf(proj[k++], false))));
    }
    const std::vector<double> w(terms.size(), 1.0);
    return weighted_sum<double>(r.tape, terms, w);
  };
  auto value_of = [&](const CIANetParams<double>& p) {
    Pass r;
    forward(r, p, x, Mode::train, false);
    return r.tape.value(scalar(r))[0];
  };

  Pass r;
  forward(r, base, x, Mode::train, true);
  const auto g = r.tape.backward(scalar(r));

  int checked = 0, failed = 0;
  double worst = 0;
  for (std::size_t i = 0; i < base.store.size(); i += 3) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, base.store.at(i).numel() - 1)(rng);
    const double analytic = g.has(r.vars->at(i)) ? g.at(r.vars->at(i))[j] : 0.0;
    auto p = base;
    const double x0 = p.store.at(i)[j], h = 1e-6 * std::max(1.0, std::abs(x0));
    p.store.at(i)[j] = x0 + h;
    const double fp = value_of(p);
    p.store.at(i)[j] = x0 - h;
    const double fm = value_of(p);
    const double numeric = (fp - fm) / (2 * h);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    ++checked;
    if (scale < 1e-6) {
      if (std::abs(analytic - numeric) > 1e-7) ++failed;
      continue;
    }
    const double rel = std::abs(analytic - numeric) / scale;
    worst = std::max(worst, rel);
    if (rel >= 1e-3) {
      ++failed;
      ADD_FAILURE() << base.store.name(i) << "[" << j << "] analytic " << analytic << " numeric " << numeric;
    }
  }
  EXPECT_GT(checked, 20);
  EXPECT_EQ(failed, 0) << "worst relative error " << worst;
}
