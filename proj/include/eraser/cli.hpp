#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eraser/config.hpp"
#include "eraser/datasynth.hpp"
#include "eraser/features.hpp"
#include "eraser/inference.hpp"
#include "eraser/io.hpp"
#include "eraser/metrics.hpp"
#include "eraser/trainer.hpp"

// Subcommands: backgrounds, synth, train, eval, erase.
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
namespace eraser::cli {

namespace fs = std::filesystem;

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

// Flags shared by every config-driven subcommand.
struct Sources {
  std::string config_file;
  std::vector<std::string> assignments;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "Config file of dotted key = value lines")->check(CLI::ExistingFile);
    cmd->add_option("--set", assignments, "Override one config key (key=value); repeatable");
  }

  config::RunConfig merged(const std::function<void(config::RunConfig&)>& flags) const {
    config::RunConfig c;
    if (!config_file.empty()) config::apply_file(c, config_file);
    for (const auto& a : assignments) config::assign(c, a);
    flags(c);
    return c;
  }
};

template <typename V>
void override_if(const CLI::Option* opt, V& target, const V& value) {
  if (opt->count() > 0) target = value;
}

// Runs `prepare` then `work`; failures in the first map to exit 2, in the
// second to exit 1.
inline int run_phases(const std::function<void()>& prepare, const std::function<void()>& work, Streams io,
                      const char* name) {
  try {
    prepare();
  } catch (const std::exception& e) {
    io.err << name << ": " << e.what() << '\n';
    return kUsageError;
  }
  try {
    work();
  } catch (const std::exception& e) {
    io.err << name << ": " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

inline std::unique_ptr<FeatureExtractor<float>> make_features(const config::FeatureConfig& f) {
  if (f.kind == "vgg16") {
    return std::make_unique<ConvFeatureExtractor<float>>(ConvFeatureExtractor<float>::vgg16(f.weights));
  }
  return std::make_unique<ConvFeatureExtractor<float>>(ConvFeatureExtractor<float>::toy(f.toy_widths, f.toy_seed));
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw std::invalid_argument(what + " " + p.string() + " does not exist");
}

}  // namespace detail

inline int run(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Scene text eraser: dataset synthesis, training, evaluation and inference"};
  app.require_subcommand(1);
  std::function<int()> action;

  // backgrounds
  auto* bg = app.add_subcommand("backgrounds", "Write procedural background images");
  fs::path bg_out;
  int bg_count = 8;
  std::uint64_t bg_seed = 0;
  int bg_size = 512;
  bg->add_option("--out", bg_out, "Output directory")->required();
  bg->add_option("--count", bg_count, "Number of images")->capture_default_str();
  bg->add_option("--seed", bg_seed, "Random seed")->capture_default_str();
  bg->add_option("--size", bg_size, "Side length in pixels")->capture_default_str();
  bg->callback([&] {
    action = [&] {
      return detail::run_phases(
          [&] {
            if (bg_count < 1 || bg_size < 16) throw std::invalid_argument("--count must be >= 1 and --size >= 16");
          },
          [&] {
            const auto files = synth::write_procedural_backgrounds(bg_out, bg_count, bg_seed, bg_size);
            io.out << "wrote " << files.size() << " backgrounds to " << bg_out.string() << '\n';
          },
          io, "backgrounds");
    };
  });

  // synth
  auto* sy = app.add_subcommand("synth", "Composite text onto backgrounds to build a training set");
  detail::Sources sy_src;
  sy_src.attach(sy);
  std::string sy_backgrounds, sy_out;
  int sy_count = 0;
  std::uint64_t sy_seed = 0;
  double sy_frac = 0;
  int sy_size = 0;
  auto* o_bgs = sy->add_option("--backgrounds", sy_backgrounds, "Directory of background images");
  auto* o_count = sy->add_option("--count", sy_count, "Number of samples");
  auto* o_seed = sy->add_option("--seed", sy_seed, "Random seed");
  auto* o_out = sy->add_option("--out", sy_out, "Dataset root to write");
  auto* o_frac = sy->add_option("--max-text-frac", sy_frac, "Largest allowed text area fraction per image");
  auto* o_size = sy->add_option("--size", sy_size, "Output side length in pixels");
  sy->callback([&] {
    action = [&] {
      config::RunConfig rc;
      return detail::run_phases(
          [&] {
            rc = sy_src.merged([&](config::RunConfig& c) {
              detail::override_if(o_bgs, c.synth.backgrounds, fs::path(sy_backgrounds));
              detail::override_if(o_count, c.synth.count, sy_count);
              detail::override_if(o_seed, c.synth.seed, sy_seed);
              detail::override_if(o_out, c.synth.out, fs::path(sy_out));
              detail::override_if(o_frac, c.synth.max_text_frac, sy_frac);
              detail::override_if(o_size, c.synth.size, sy_size);
            });
            if (rc.synth.backgrounds.empty()) throw std::invalid_argument("--backgrounds is required");
            if (rc.synth.out.empty()) throw std::invalid_argument("--out is required");
            rc.synth.validate();
          },
          [&] {
            const auto r = synth::generate_dataset(rc.synth, &io.err);
            config::echo(rc, rc.synth.out);
            io.out << "wrote " << r.ids.size() << " samples to " << rc.synth.out.string() << '\n';
          },
          io, "synth");
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the generator and discriminator");
  detail::Sources tr_src;
  tr_src.attach(tr);
  fs::path tr_data, tr_run, tr_resume;
  long tr_iters = 0;
  std::uint64_t tr_seed = 0;
  int tr_batch = 0;
  tr->add_option("--data", tr_data, "Dataset root")->required();
  tr->add_option("--run", tr_run, "Run directory for checkpoints and the log")->required();
  auto* o_iters = tr->add_option("--iterations", tr_iters, "Total iterations");
  auto* o_tseed = tr->add_option("--seed", tr_seed, "Training seed");
  auto* o_batch = tr->add_option("--batch-size", tr_batch, "Batch size");
  auto* o_resume = tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  tr->callback([&] {
    action = [&] {
      config::RunConfig rc;
      std::vector<Sample> data;
      std::unique_ptr<FeatureExtractor<float>> fx;
      return detail::run_phases(
          [&] {
            rc = tr_src.merged([&](config::RunConfig& c) {
              detail::override_if(o_iters, c.train.total_iterations, tr_iters);
              detail::override_if(o_tseed, c.train.seed, tr_seed);
              detail::override_if(o_batch, c.train.batch_size, tr_batch);
            });
            rc.train.validate();
            if (o_resume->count()) detail::require_file(tr_resume, "checkpoint");
            fx = detail::make_features(rc.features);
            data = io::load_dataset(tr_data);
            if (data.empty()) throw std::invalid_argument("dataset " + tr_data.string() + " has no samples");
            const auto& first = data.front().input;
            if (first.height() != rc.train.image_size || first.width() != rc.train.image_size) {
              throw std::invalid_argument("dataset images are " + std::to_string(first.height()) + "x" +
                                          std::to_string(first.width()) + " but train.image_size is " +
                                          std::to_string(rc.train.image_size));
            }
          },
          [&] {
            config::echo(rc, tr_run);
            std::optional<fs::path> resume;
            if (o_resume->count()) resume = tr_resume;
            const auto r = fit<float>(rc.train, data, *fx, tr_run, resume, &io.out);
            io.out << "final checkpoint " << r.final_checkpoint.string() << '\n';
          },
          io, "train");
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  detail::Sources ev_src;
  ev_src.attach(ev);
  fs::path ev_data, ev_ckpt, ev_out;
  bool ev_identity = false;
  double ev_tau = 0;
  ev->add_option("--data", ev_data, "Dataset root")->required();
  auto* o_ckpt = ev->add_option("--checkpoint", ev_ckpt, "Training checkpoint");
  auto* o_ident = ev->add_flag("--identity", ev_identity, "Score the input images unchanged instead of a model");
  o_ckpt->excludes(o_ident);
  ev->add_option("--out", ev_out, "Directory for metrics.txt and summary.txt")->required();
  auto* o_tau = ev->add_option("--tau", ev_tau, "Error-pixel threshold in gray levels");
  ev->callback([&] {
    action = [&] {
      config::RunConfig rc;
      io::Dataset dataset;
      std::optional<Generator<float>> gen;
      return detail::run_phases(
          [&] {
            rc = ev_src.merged([&](config::RunConfig& c) { detail::override_if(o_tau, c.tau, ev_tau); });
            if (!(rc.tau >= 0)) throw std::invalid_argument("--tau must be >= 0");
            if (!ev_identity) {
              if (!o_ckpt->count()) throw std::invalid_argument("one of --checkpoint or --identity is required");
              detail::require_file(ev_ckpt, "checkpoint");
              gen.emplace(load_generator<float>(ev_ckpt));
            }
            dataset = io::open_dataset(ev_data);
          },
          [&] {
            config::echo(rc, ev_out);
            metrics::ImageModel model = [](const ImageTensor& x) { return x; };
            if (gen) model = [&](const ImageTensor& x) { return erase_text(*gen, x).full; };
            const auto report = metrics::evaluate(model, dataset, rc.tau);
            metrics::write_report(report, ev_out);
            io.out << metrics::summary_table(report);
            for (const auto& [id, why] : report.failures) io.err << "eval: skipped " << id << ": " << why << '\n';
          },
          io, "eval");
    };
  });

  // erase
  auto* er = app.add_subcommand("erase", "Remove text from one image");
  fs::path er_in, er_ckpt, er_out, er_score;
  bool er_scales = false;
  er->add_option("--input", er_in, "Image to clean")->required();
  er->add_option("--checkpoint", er_ckpt, "Training checkpoint")->required();
  er->add_option("--output", er_out, "Where to write the erased image (PNG)")->required();
  er->add_flag("--dump-scales", er_scales, "Also write the 1/4 and 1/2 scale outputs next to --output");
  auto* o_score = er->add_option("--score-map", er_score, "Also write the text score map as a gray image");
  er->callback([&] {
    action = [&] {
      std::optional<Generator<float>> gen;
      ImageTensor image;
      return detail::run_phases(
          [&] {
            detail::require_file(er_in, "input image");
            detail::require_file(er_ckpt, "checkpoint");
            image = io::read_image(er_in);
            gen.emplace(load_generator<float>(er_ckpt));
          },
          [&] {
            const auto r = erase_text(*gen, image);
            io::write_image(er_out, r.full);
            if (er_scales) {
              const fs::path stem = er_out.parent_path() / er_out.stem();
              io::write_image(stem.string() + "_half.png", r.half);
              io::write_image(stem.string() + "_quarter.png", r.quarter);
            }
            if (o_score->count()) io::write_image(er_score, r.score);
            io.out << "wrote " << er_out.string() << '\n';
          },
          io, "erase");
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kOk : kUsageError;
  }
  return action ? action() : kUsageError;
}

}  // namespace eraser::cli
