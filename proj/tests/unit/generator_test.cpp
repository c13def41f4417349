#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "eraser/generator.hpp"
#include "gradcheck.hpp"

using namespace eraser;
using eraser::testing::uniform_tensor;

namespace {

GeneratorConfig toy_config(int size = 64, int base = 8) {
  GeneratorConfig c;
  c.base_channels = base;
  c.image_size = size;
  return c;
}

void expect_bounded(const Tensor<float>& t, float lo, float hi) {
  for (float v : t.values()) {
    ASSERT_GE(v, lo);
    ASSERT_LE(v, hi);
  }
}

}  // namespace

TEST(Generator, BuildIsDeterministicPerSeed) {
  const GeneratorConfig cfg;
  Generator<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  EXPECT_GT(a.parameters().scalar_count(), 0u);
  EXPECT_EQ(a.parameters().scalar_count(), b.parameters().scalar_count());
  EXPECT_EQ(nn::parameter_hash(a.parameters()), nn::parameter_hash(b.parameters()));
  EXPECT_NE(nn::parameter_hash(a.parameters()), nn::parameter_hash(c.parameters()));
  for (const auto& [name, v] : a.parameters().entries()) {
    for (float x : v.value().values()) ASSERT_TRUE(std::isfinite(x)) << name;
  }
}

TEST(Generator, DeconvPathwayHasFiveStrideTwoStages) {
  EXPECT_EQ(Generator<float>::kDeconvStages, 5);
  Generator<float> g(toy_config(), 1);
  int deconvs = 0;
  for (const auto& [name, v] : g.parameters().entries()) {
    if (name.rfind("deconv", 0) == 0 && name.ends_with(".weight")) {
      ++deconvs;
      EXPECT_EQ(v.dim(2), 4);
      EXPECT_EQ(v.dim(3), 4);
    }
  }
  EXPECT_EQ(deconvs, 5);
  EXPECT_EQ(Generator<float>::kDeconvStride, 2);
  EXPECT_EQ(Generator<float>::kDeconvPad, 1);
}

TEST(Generator, ConvPathwayDownsamplesBy32) {
  const auto s = Generator<float>::conv_pathway_strides();
  EXPECT_EQ(std::accumulate(s.begin(), s.end(), 1, std::multiplies<>()), 32);
  Generator<float> g(toy_config(64), 2);
  GeneratorTrace<float> trace;
  g.forward(Var<float>(Tensor<float>(Shape{1, 3, 64, 64})), &trace);
  EXPECT_EQ(trace.residual[3].dim(2), 64 / 32);
}

TEST(LateralTransform, PreservesShapeWithRatioFourBottleneck) {
  nn::ParameterSet<float> params;
  std::mt19937_64 rng(3);
  const auto lat = make_lateral<float>(params, "lat", 256, 4, 1.0f, rng);
  EXPECT_EQ(lat.internal_widths(), (std::array<int, 4>{64, 64, 64, 256}));
  Var<float> x(uniform_tensor({1, 256, 5, 7}, rng).cast<float>());
  EXPECT_EQ(lat(x).shape(), (Shape{1, 256, 5, 7}));
  EXPECT_THROW(lat(Var<float>(Tensor<float>(Shape{1, 128, 5, 7}))), std::invalid_argument);
}

TEST(LateralTransform, ZeroInputWithZeroExpandGivesZero) {
  nn::ParameterSet<float> params;
  std::mt19937_64 rng(4);
  const auto lat = make_lateral<float>(params, "lat", 16, 4, 1.0f, rng, /*zero_expand=*/true);
  const auto y = lat(Var<float>(Tensor<float>(Shape{1, 16, 4, 4}))).value();
  for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Generator, FullSizeShapesAndBounds) {
  Generator<float> g(GeneratorConfig{}, 7);
  std::mt19937_64 rng(8);
  Var<float> x(uniform_tensor({1, 3, 512, 512}, rng).cast<float>());
  NoGradGuard no_grad;
  GeneratorTrace<float> trace;
  const auto out = g.forward(x, &trace);
  EXPECT_EQ(out.quarter.shape(), (Shape{1, 3, 128, 128}));
  EXPECT_EQ(out.half.shape(), (Shape{1, 3, 256, 256}));
  EXPECT_EQ(out.full.shape(), (Shape{1, 3, 512, 512}));
  EXPECT_EQ(out.score_map.shape(), (Shape{1, 1, 16, 16}));
  expect_bounded(out.quarter.value(), -1, 1);
  expect_bounded(out.half.value(), -1, 1);
  expect_bounded(out.full.value(), -1, 1);
  expect_bounded(out.score_map.value(), 0, 1);

  // Each transformed tap matches the deconvolution stage it is summed into.
  EXPECT_EQ(trace.lateral[2].shape(), trace.deconv[0].shape());
  EXPECT_EQ(trace.lateral[1].shape(), trace.deconv[1].shape());
  EXPECT_EQ(trace.lateral[0].shape(), trace.deconv[2].shape());
  EXPECT_EQ(trace.lateral[3].shape(), trace.residual[3].shape());
}

TEST(Generator, OutputsStayBoundedForExtremeWeights) {
  Generator<float> g(toy_config(32, 4), 9);
  std::mt19937_64 rng(10);
  for (auto [name, v] : g.parameters().entries()) {
    for (auto& w : v.mutable_value().values()) w *= 50.0f;
  }
  NoGradGuard no_grad;
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = g.forward(Var<float>(uniform_tensor({2, 3, 32, 32}, rng, -1, 1).cast<float>()));
    expect_bounded(out.full.value(), -1, 1);
    expect_bounded(out.half.value(), -1, 1);
    expect_bounded(out.quarter.value(), -1, 1);
  }
}

TEST(Generator, ForwardIsBitwiseDeterministic) {
  Generator<float> g(toy_config(), 11);
  std::mt19937_64 rng(12);
  Var<float> x(uniform_tensor({2, 3, 64, 64}, rng).cast<float>());
  const auto a = g.forward(x);
  const auto b = g.forward(x);
  EXPECT_EQ(a.full.value(), b.full.value());
  EXPECT_EQ(a.half.value(), b.half.value());
  EXPECT_EQ(a.quarter.value(), b.quarter.value());
}

TEST(Generator, RejectsWrongInputSize) {
  Generator<float> g(toy_config(64), 13);
  EXPECT_THROW(g.forward(Var<float>(Tensor<float>(Shape{1, 3, 32, 32}))), std::invalid_argument);
  EXPECT_THROW(g.forward(Var<float>(Tensor<float>(Shape{1, 1, 64, 64}))), std::invalid_argument);
  GeneratorConfig bad;
  bad.image_size = 100;
  EXPECT_THROW(Generator<float>(bad, 0), std::invalid_argument);
  bad = GeneratorConfig{};
  bad.base_channels = 0;
  EXPECT_THROW(Generator<float>(bad, 0), std::invalid_argument);
}

// Central differences on sampled weights of every parameter tensor against
// the analytic gradient of the summed outputs at 64×64. The step is small because a
// bias shift moves many ReLU pre-activations at once.
TEST(Generator, WeightGradientsMatchFiniteDifferences) {
  Generator<double> g(toy_config(64, 8), 14);
  std::mt19937_64 rng(15);
  const Tensor<double> input = uniform_tensor({1, 3, 64, 64}, rng);
  auto objective = [&] {
    const auto out = g.forward(Var<double>(input));
    return ops::add(ops::add(ops::sum(out.full), ops::sum(out.half)), ops::sum(out.quarter));
  };

  g.parameters().zero_grad();
  backward(objective());

  const double step = 1e-5;
  double worst = 0;
  int checked = 0;
  for (auto [name, p] : g.parameters().entries()) {
    if (!p.has_grad()) {
      // Only the score head is off the path to the image outputs.
      EXPECT_EQ(name.rfind("tail.score", 0), 0u) << name;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, p.value().size() - 1);
    const std::size_t i = pick(rng);
    const double analytic = p.grad()[i];
    const double saved = p.value()[i];
    NoGradGuard no_grad;
    p.mutable_value()[i] = saved + step;
    const double fp = objective().value().item();
    p.mutable_value()[i] = saved - step;
    const double fm = objective().value().item();
    p.mutable_value()[i] = saved;
    const double numeric = (fp - fm) / (2 * step);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(rel, 1e-2) << name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
    worst = std::max(worst, rel);
    ++checked;
  }
  EXPECT_GT(checked, 40);
  RecordProperty("worst_relative_error", std::to_string(worst));
}
