#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "eraser/trainer.hpp"
#include "sample_fixtures.hpp"

using namespace eraser;
namespace fs = std::filesystem;

namespace {

TrainConfig toy_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.total_iterations = 4;
  c.image_size = 64;
  c.base_channels = 4;
  c.disc_widths = {4, 8, 8, 8};
  c.seed = 99;
  c.checkpoint_every = 2;
  return c;
}

const ConvFeatureExtractor<float>& toy_fx() {
  static const auto fx = ConvFeatureExtractor<float>::toy({4, 8, 8});
  return fx;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eraser_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(BatchOrder, IsAPureFunctionOfSeedAndIteration) {
  EXPECT_EQ(batch_indices(5, 7, 3, 10), batch_indices(5, 7, 3, 10));
  EXPECT_NE(batch_indices(5, 0, 10, 10), batch_indices(6, 0, 10, 10));
  // Each epoch is a permutation of the dataset.
  for (long epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (long it = epoch * 5; it < epoch * 5 + 5; ++it)
      for (auto i : batch_indices(1, it, 2, 10)) seen.insert(i);
    EXPECT_EQ(seen.size(), 10u);
  }
  EXPECT_THROW(batch_indices(1, 0, 1, 0), std::invalid_argument);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  TrainConfig c = toy_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy_config();
  c.optimizer.learning_rate = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy_config();
  c.loss.lambda_tex = -2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy_config();
  c.image_size = 100;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Adam, MatchesScalarRecurrence) {
  nn::ParameterSet<double> params;
  Var<double> w = params.add("w", Tensor<double>(Shape{2}, std::vector<double>{0.5, -1.0}));
  AdamConfig cfg;
  Adam<double> opt(params, cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.0};
  for (int t = 1; t <= 5; ++t) {
    const double g[2] = {0.3 * t, -0.7 + 0.1 * t};
    w.zero_grad();
    w.grad_buffer()[0] = g[0];
    w.grad_buffer()[1] = g[1];
    opt.step();
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.5 * m[i] + 0.5 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.5, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 2e-4 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w.value()[i], ref[i], 1e-15);
    }
  }
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Trainer, UpdatesAreDetached) {
  const auto data = eraser::testing::stroke_samples(2, 64, 1);
  Trainer<float> trainer(toy_config(), toy_fx());
  const auto g0 = nn::parameter_hash(trainer.generator().parameters());
  const auto d0 = nn::parameter_hash(trainer.discriminator().parameters());
  std::uint64_t d1 = 0;
  int phases = 0;
  trainer.on_phase = [&](std::string_view phase) {
    ++phases;
    const auto g = nn::parameter_hash(trainer.generator().parameters());
    const auto d = nn::parameter_hash(trainer.discriminator().parameters());
    if (phase == "discriminator.updated") {
      EXPECT_EQ(g, g0);
      EXPECT_NE(d, d0);
      d1 = d;
    } else if (phase == "generator.updated") {
      EXPECT_EQ(d, d1);
      EXPECT_NE(g, g0);
    }
  };
  trainer.train_step(data);
  EXPECT_EQ(phases, 3);
  EXPECT_EQ(trainer.iteration(), 1);
}

TEST(Trainer, MultiscaleOnlyWeightsGiveMultiscaleGradients) {
  const auto data = eraser::testing::stroke_samples(1, 64, 2);
  TrainConfig cfg = toy_config();
  cfg.loss.lambda_e = cfg.loss.lambda_tex = cfg.loss.lambda_t = cfg.loss.lambda_adv = 0;
  Trainer<float> trainer(cfg, toy_fx());
  Generator<float> twin(cfg.generator_config(), cfg.seed);

  std::vector<Tensor<float>> got;
  trainer.on_phase = [&](std::string_view phase) {
    if (phase != "generator.gradients") return;
    for (const auto& [name, v] : trainer.generator().parameters().entries()) {
      got.push_back(v.has_grad() ? v.grad() : Tensor<float>(v.shape()));
    }
  };
  trainer.train_step(data);

  const auto tb = make_target_batch<float>(std::span<const Sample>(data));
  backward(multiscale_regression_loss(tb, twin.forward(Var<float>(tb.input)), cfg.loss));
  std::size_t i = 0;
  for (const auto& [name, v] : twin.parameters().entries()) {
    const Tensor<float> want = v.has_grad() ? v.grad() : Tensor<float>(v.shape());
    ASSERT_EQ(got[i].shape(), want.shape()) << name;
    for (std::size_t j = 0; j < want.size(); ++j) ASSERT_EQ(got[i][j], want[j]) << name << "[" << j << "]";
    ++i;
  }
}

TEST(Trainer, TwoRunsGiveIdenticalScalars) {
  const auto data = eraser::testing::stroke_samples(2, 64, 3);
  Trainer<float> a(toy_config(), toy_fx()), b(toy_config(), toy_fx());
  for (int step = 0; step < 2; ++step) {
    const auto ra = a.train_step(data), rb = b.train_step(data);
    EXPECT_EQ(ra.discriminator, rb.discriminator);
    EXPECT_EQ(ra.generator.total, rb.generator.total);
    EXPECT_EQ(format_log_line(step, ra), format_log_line(step, rb));
  }
}

TEST(Trainer, NonFiniteLossNamesTheBatch) {
  const auto data = eraser::testing::stroke_samples(2, 64, 4);
  Trainer<float> trainer(toy_config(), toy_fx());
  Var<float> w = trainer.generator().parameters().find("deconv5.bias");
  w.mutable_value()[0] = std::nanf("");
  try {
    trainer.train_step(data);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("s0,s1"), std::string::npos) << e.what();
    EXPECT_EQ(e.iteration, 1);
  }
}

TEST(Trainer, RejectsBatchOfWrongSize) {
  Trainer<float> trainer(toy_config(), toy_fx());
  EXPECT_THROW(trainer.train_step(eraser::testing::stroke_samples(1, 128, 5)), std::invalid_argument);
}

TEST(Fit, ZeroIterationsWritesInitialCheckpointOnly) {
  const auto dir = scratch("zero");
  TrainConfig cfg = toy_config();
  cfg.total_iterations = 0;
  const auto r = fit<float>(cfg, eraser::testing::stroke_samples(2, 64, 6), toy_fx(), dir);
  EXPECT_TRUE(fs::exists(dir / "ckpt_0.bin"));
  EXPECT_EQ(r.final_checkpoint, dir / "ckpt_0.bin");
  EXPECT_TRUE(read_lines(r.log).empty());
  fs::remove_all(dir);
}

TEST(Fit, ResumeContinuesTheIdenticalTrajectory) {
  const auto data = eraser::testing::stroke_samples(3, 64, 7);
  const TrainConfig cfg = toy_config();
  const auto hash_before = toy_fx().parameter_hash();

  const auto full = scratch("full");
  const auto r = fit<float>(cfg, data, toy_fx(), full);
  const auto lines = read_lines(r.log);
  ASSERT_EQ(lines.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(log_line_iteration(lines[k]), k + 1);
  for (long k : {0, 2, 4}) EXPECT_TRUE(fs::exists(checkpoint_path(full, k))) << k;
  for (const auto& s : r.steps) {
    EXPECT_TRUE(std::isfinite(s.generator.total));
    EXPECT_TRUE(std::isfinite(s.discriminator));
  }

  // Resume in a copy whose log has run ahead of the checkpoint.
  const auto resumed = scratch("resumed");
  fs::copy(full, resumed);
  const auto r2 = fit<float>(cfg, data, toy_fx(), resumed, checkpoint_path(resumed, 2));
  EXPECT_EQ(r2.steps.size(), 2u);
  EXPECT_EQ(read_lines(r2.log), lines);
  EXPECT_EQ(fs::file_size(checkpoint_path(resumed, 4)), fs::file_size(checkpoint_path(full, 4)));
  const auto g_full = load_generator<float>(checkpoint_path(full, 4));
  const auto g_resumed = load_generator<float>(checkpoint_path(resumed, 4));
  EXPECT_EQ(nn::parameter_hash(g_full.parameters()), nn::parameter_hash(g_resumed.parameters()));

  EXPECT_EQ(toy_fx().parameter_hash(), hash_before);
  fs::remove_all(full);
  fs::remove_all(resumed);
}

TEST(Fit, MissingCheckpointIsReported) {
  const auto dir = scratch("missing");
  EXPECT_THROW(fit<float>(toy_config(), eraser::testing::stroke_samples(1, 64, 8), toy_fx(), dir, dir / "nope.bin"),
               std::runtime_error);
  fs::remove_all(dir);
}
