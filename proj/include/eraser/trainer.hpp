#pragma once

#include <cblas.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eraser/archive.hpp"
#include "eraser/discriminator.hpp"
#include "eraser/features.hpp"
#include "eraser/generator.hpp"
#include "eraser/losses.hpp"
#include "eraser/optim.hpp"

namespace eraser {

struct TrainConfig {
  int batch_size = 4;
  long total_iterations = 10000;
  AdamConfig optimizer;
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  long log_every = 1;
  int image_size = 512;
  int base_channels = 64;
  std::array<int, 4> disc_widths{64, 128, 256, 512};
  bool deterministic = true;
  LossWeights loss;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (total_iterations < 0) throw std::invalid_argument("train.total_iterations must be >= 0");
    if (checkpoint_every < 1) throw std::invalid_argument("train.checkpoint_every must be >= 1");
    if (log_every < 1) throw std::invalid_argument("train.log_every must be >= 1");
    optimizer.validate();
    loss.validate();
    generator_config().validate();
    discriminator_config().validate();
  }

  GeneratorConfig generator_config() const {
    GeneratorConfig g;
    g.base_channels = base_channels;
    g.image_size = image_size;
    return g;
  }

  DiscriminatorConfig discriminator_config() const {
    DiscriminatorConfig d;
    d.widths = disc_widths;
    d.image_size = image_size;
    return d;
  }
};

// Sample indices for one iteration. Epoch e visits the dataset in a
// permutation seeded by (seed, e), so the order depends on nothing but
// (seed, iteration).
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, long iteration, int batch_size,
                                              std::size_t dataset_size) {
  if (dataset_size == 0) throw std::invalid_argument("cannot draw batches from an empty dataset");
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  long cached_epoch = -1;
  for (int j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = static_cast<std::uint64_t>(iteration) * batch_size + j;
    const long epoch = static_cast<long>(pos / dataset_size);
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch)};
      std::mt19937_64 rng(seq);
      // Fisher-Yates with an explicit draw so the order is the same across
      // standard library implementations.
      for (std::size_t i = dataset_size - 1; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(const std::string& what, std::vector<std::string> ids, long iteration)
      : std::runtime_error(what), batch_ids(std::move(ids)), iteration(iteration) {}
  std::vector<std::string> batch_ids;
  long iteration;
};

struct StepResult {
  LossBreakdown generator;
  double discriminator = 0;
};

inline std::string format_log_line(long iteration, const StepResult& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "iteration=%ld lm=%.9g lc=%.9g lt=%.9g ltv=%.9g ladv=%.9g d=%.9g", iteration,
                r.generator.multiscale, r.generator.content, r.generator.texture, r.generator.tv,
                r.generator.adversarial, r.discriminator);
  return buf;
}

// Iteration number of a log line, or nullopt for anything else.
inline std::optional<long> log_line_iteration(std::string_view line) {
  constexpr std::string_view key = "iteration=";
  if (line.substr(0, key.size()) != key) return std::nullopt;
  try {
    return std::stol(std::string(line.substr(key.size())));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline constexpr const char* kCheckpointFormat = "text-eraser-checkpoint";

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long iteration) {
  return dir / ("ckpt_" + std::to_string(iteration) + ".bin");
}

// Generator, discriminator and their optimizers, advanced one alternating
// update at a time.
template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& config, const FeatureExtractor<T>& fx)
      : config_(validated(config)),
        fx_(&fx),
        gen_(config_.generator_config(), config_.seed),
        disc_(config_.discriminator_config(), config_.seed ^ 0xd15c0000d15cull),
        opt_g_(gen_.parameters(), config_.optimizer),
        opt_d_(disc_.parameters(), config_.optimizer) {
    if (config_.deterministic) openblas_set_num_threads(1);
  }

  const TrainConfig& config() const { return config_; }
  long iteration() const { return iteration_; }
  Generator<T>& generator() { return gen_; }
  const Generator<T>& generator() const { return gen_; }
  Discriminator<T>& discriminator() { return disc_; }
  const Discriminator<T>& discriminator() const { return disc_; }

  // Observation points: "discriminator.updated", "generator.gradients"
  // (before the generator's optimizer step) and "generator.updated".
  std::function<void(std::string_view)> on_phase;

  StepResult train_step(std::span<const Sample> batch) {
    if (batch.empty()) throw std::invalid_argument("train_step needs a nonempty batch");
    const TargetBatch<T> tb = make_target_batch<T>(batch);
    if (tb.input.dim(2) != config_.image_size || tb.input.dim(3) != config_.image_size) {
      throw std::invalid_argument("batch images are " + shape_string(tb.input.shape()) + ", trainer expects " +
                                  std::to_string(config_.image_size) + "²");
    }
    std::vector<PatchLabelMap> labels;
    for (const auto& s : batch) labels.push_back(label_map(s.mask));
    const std::span<const PatchLabelMap> lab(labels);
    const Var<T> x(tb.input);
    const Var<T> real(tb.gt_full());

    gen_.parameters().zero_grad();
    disc_.parameters().zero_grad();
    const MultiScaleOutput<T> outs = gen_.forward(x);

    // Critic update on the real pair and the detached generated pair.
    StepResult result;
    {
      const Var<T> d_loss = discriminator_loss(disc_.forward(x, real), disc_.forward(x, outs.full.detach()), lab);
      result.discriminator = d_loss.value().item();
      require_finite(result.discriminator, "discriminator", tb.ids);
      backward(d_loss);
      opt_d_.step();
      disc_.parameters().zero_grad();
      if (on_phase) on_phase("discriminator.updated");
    }

    // Generator update through a frozen critic.
    disc_.parameters().set_requires_grad(false);
    try {
      const Var<T> adv = generator_adversarial_loss(disc_.forward(x, outs.full), lab);
      const RefinedLoss<T> loss = refined_loss(tb, outs, adv, config_.loss, *fx_);
      result.generator = loss.breakdown();
      require_finite(result.generator.total, "generator", tb.ids);
      backward(loss.total);
    } catch (...) {
      disc_.parameters().set_requires_grad(true);
      throw;
    }
    disc_.parameters().set_requires_grad(true);
    disc_.parameters().zero_grad();
    if (on_phase) on_phase("generator.gradients");
    opt_g_.step();
    gen_.parameters().zero_grad();
    ++iteration_;
    if (on_phase) on_phase("generator.updated");
    return result;
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    Archive ar;
    ar.set_meta("format", kCheckpointFormat);
    ar.set_meta("iteration", std::to_string(iteration_));
    ar.set_meta("seed", std::to_string(config_.seed));
    ar.set_meta("image_size", std::to_string(config_.image_size));
    ar.set_meta("base_channels", std::to_string(config_.base_channels));
    std::string widths;
    for (int w : config_.disc_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
    ar.set_meta("disc_widths", widths);
    ar.put_parameters("generator/", gen_.parameters());
    ar.put_parameters("discriminator/", disc_.parameters());
    opt_g_.save(ar, "adam.generator/");
    opt_d_.save(ar, "adam.discriminator/");
    ar.save(path);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    const Archive ar = Archive::load(path);
    if (ar.meta("format").value_or("") != kCheckpointFormat) {
      throw std::runtime_error(path.string() + " is not a training checkpoint");
    }
    auto expect = [&](const char* key, const std::string& want) {
      const std::string got = ar.require_meta(key);
      if (got != want) {
        throw std::runtime_error(path.string() + ": checkpoint " + key + "=" + got + " but the run uses " + want);
      }
    };
    expect("image_size", std::to_string(config_.image_size));
    expect("base_channels", std::to_string(config_.base_channels));
    ar.load_parameters("generator/", gen_.parameters());
    ar.load_parameters("discriminator/", disc_.parameters());
    opt_g_.load(ar, "adam.generator/");
    opt_d_.load(ar, "adam.discriminator/");
    iteration_ = std::stol(ar.require_meta("iteration"));
  }

 private:
  static const TrainConfig& validated(const TrainConfig& c) {
    c.validate();
    return c;
  }

  void require_finite(double v, const char* which, const std::vector<std::string>& ids) const {
    if (std::isfinite(v)) return;
    std::string list;
    for (const auto& id : ids) list += (list.empty() ? "" : ",") + id;
    throw NonFiniteLoss(std::string("non-finite ") + which + " loss at iteration " + std::to_string(iteration_ + 1) +
                            " on batch [" + list + "]",
                        ids, iteration_ + 1);
  }

  TrainConfig config_;
  const FeatureExtractor<T>* fx_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  Adam<T> opt_g_;
  Adam<T> opt_d_;
  long iteration_ = 0;
};

// Rebuilds the generator stored in a training checkpoint.
template <typename T>
Generator<T> load_generator(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  if (ar.meta("format").value_or("") != kCheckpointFormat) {
    throw std::runtime_error(path.string() + " is not a training checkpoint");
  }
  GeneratorConfig g;
  g.image_size = std::stoi(ar.require_meta("image_size"));
  g.base_channels = std::stoi(ar.require_meta("base_channels"));
  Generator<T> gen(g, 0);
  ar.load_parameters("generator/", gen.parameters());
  return gen;
}

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  std::vector<StepResult> steps;  // steps run by this call
};

// Runs training from scratch or from `resume`, writing ckpt_<k>.bin files and
// a line-delimited scalar log into `run_dir`. On resume the log is cut back to
// the checkpoint's iteration before new lines are appended.
template <typename T>
FitResult fit(const TrainConfig& config, const std::vector<Sample>& data, const FeatureExtractor<T>& fx,
              const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& resume = {},
              std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  if (data.empty()) throw std::invalid_argument("training set is empty");
  fs::create_directories(run_dir);
  Trainer<T> trainer(config, fx);
  FitResult result;
  result.log = run_dir / "train_log.txt";

  std::vector<std::string> kept;
  if (resume) {
    trainer.load_checkpoint(*resume);
    std::ifstream in(result.log);
    for (std::string line; std::getline(in, line);) {
      const auto k = log_line_iteration(line);
      if (k && *k <= trainer.iteration()) kept.push_back(line);
    }
  } else {
    trainer.save_checkpoint(checkpoint_path(run_dir, 0));
    result.final_checkpoint = checkpoint_path(run_dir, 0);
  }
  {
    std::ofstream out(result.log, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + result.log.string());
    for (const auto& l : kept) out << l << '\n';
  }
  std::ofstream log(result.log, std::ios::app);

  std::vector<Sample> batch;
  while (trainer.iteration() < config.total_iterations) {
    batch.clear();
    for (std::size_t i : batch_indices(config.seed, trainer.iteration(), config.batch_size, data.size())) {
      batch.push_back(data[i]);
    }
    StepResult r;
    try {
      r = trainer.train_step(batch);
    } catch (const NonFiniteLoss& e) {
      const fs::path dump = run_dir / ("nonfinite_" + std::to_string(e.iteration) + ".txt");
      std::ofstream d(dump);
      d << e.what() << '\n';
      for (const auto& id : e.batch_ids) d << "id=" << id << '\n';
      throw NonFiniteLoss(std::string(e.what()) + " (details in " + dump.string() + ")", e.batch_ids, e.iteration);
    }
    result.steps.push_back(r);
    const long k = trainer.iteration();
    if (k % config.log_every == 0 || k == config.total_iterations) {
      log << format_log_line(k, r) << '\n';
      log.flush();
      if (!log) throw std::runtime_error("write failed on " + result.log.string());
      if (progress) *progress << format_log_line(k, r) << '\n';
    }
    if (k % config.checkpoint_every == 0 || k == config.total_iterations) {
      result.final_checkpoint = checkpoint_path(run_dir, k);
      trainer.save_checkpoint(result.final_checkpoint);
    }
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = *resume;
  return result;
}

}  // namespace eraser
