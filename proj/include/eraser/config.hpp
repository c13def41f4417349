#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "eraser/datasynth.hpp"
#include "eraser/metrics.hpp"
#include "eraser/trainer.hpp"

// Flat text configuration: one `dotted.key = value` per line, `#` starts a
// comment, lists are comma separated. Sources are applied in order, later
// ones winning: built-in defaults, then a config file, then command-line
// flags.
namespace eraser::config {

namespace fs = std::filesystem;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FeatureConfig {
  std::string kind = "toy";  // toy | vgg16
  fs::path weights;          // vgg16 archive
  std::vector<int> toy_widths{64, 128, 256};
  std::uint64_t toy_seed = 0x5eed;
};

struct RunConfig {
  TrainConfig train;
  synth::SynthConfig synth;
  FeatureConfig features;
  double tau = metrics::kDefaultTau;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& text) {
  std::vector<N> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<N>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

inline std::string show(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename N>
std::string show(N v) requires std::is_integral_v<N> {
  return std::to_string(v);
}

template <typename C>
std::string show_list(const C& values) {
  std::string s;
  for (const auto& v : values) s += (s.empty() ? "" : ",") + show(v);
  return s;
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ERASER_NUMBER_KEY(name, member, type)                                        \
  {                                                                                  \
    name, Key {                                                                      \
      [](RunConfig& c, const std::string& v) { c.member = parse_number<type>(name, v); }, \
          [](const RunConfig& c) { return show(c.member); }                          \
    }                                                                                \
  }

inline const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = {
      ERASER_NUMBER_KEY("train.batch_size", train.batch_size, int),
      ERASER_NUMBER_KEY("train.total_iterations", train.total_iterations, long),
      ERASER_NUMBER_KEY("train.seed", train.seed, std::uint64_t),
      ERASER_NUMBER_KEY("train.checkpoint_every", train.checkpoint_every, long),
      ERASER_NUMBER_KEY("train.log_every", train.log_every, long),
      ERASER_NUMBER_KEY("train.image_size", train.image_size, int),
      ERASER_NUMBER_KEY("train.base_channels", train.base_channels, int),
      {"train.disc_widths",
       {[](RunConfig& c, const std::string& v) {
          const auto w = parse_list<int>("train.disc_widths", v);
          if (w.size() != 4) throw ConfigError("train.disc_widths: expected 4 widths");
          std::copy(w.begin(), w.end(), c.train.disc_widths.begin());
        },
        [](const RunConfig& c) { return show_list(c.train.disc_widths); }}},
      {"train.deterministic",
       {[](RunConfig& c, const std::string& v) { c.train.deterministic = parse_bool("train.deterministic", v); },
        [](const RunConfig& c) { return std::string(c.train.deterministic ? "true" : "false"); }}},
      ERASER_NUMBER_KEY("optimizer.learning_rate", train.optimizer.learning_rate, double),
      ERASER_NUMBER_KEY("optimizer.beta1", train.optimizer.beta1, double),
      ERASER_NUMBER_KEY("optimizer.beta2", train.optimizer.beta2, double),
      ERASER_NUMBER_KEY("optimizer.eps", train.optimizer.eps, double),
      ERASER_NUMBER_KEY("loss.alpha", train.loss.alpha, double),
      {"loss.lambda_scales",
       {[](RunConfig& c, const std::string& v) {
          const auto w = parse_list<double>("loss.lambda_scales", v);
          if (w.size() != 3) throw ConfigError("loss.lambda_scales: expected 3 weights (quarter, half, full)");
          std::copy(w.begin(), w.end(), c.train.loss.lambda_scales.begin());
        },
        [](const RunConfig& c) { return show_list(c.train.loss.lambda_scales); }}},
      ERASER_NUMBER_KEY("loss.lambda_e", train.loss.lambda_e, double),
      ERASER_NUMBER_KEY("loss.lambda_tex", train.loss.lambda_tex, double),
      ERASER_NUMBER_KEY("loss.lambda_t", train.loss.lambda_t, double),
      ERASER_NUMBER_KEY("loss.lambda_adv", train.loss.lambda_adv, double),
      {"features.kind",
       {[](RunConfig& c, const std::string& v) {
          const auto k = trim(v);
          if (k != "toy" && k != "vgg16") throw ConfigError("features.kind: expected toy or vgg16, got '" + v + "'");
          c.features.kind = k;
        },
        [](const RunConfig& c) { return c.features.kind; }}},
      {"features.weights", {[](RunConfig& c, const std::string& v) { c.features.weights = trim(v); },
                            [](const RunConfig& c) { return c.features.weights.string(); }}},
      {"features.toy_widths",
       {[](RunConfig& c, const std::string& v) { c.features.toy_widths = parse_list<int>("features.toy_widths", v); },
        [](const RunConfig& c) { return show_list(c.features.toy_widths); }}},
      ERASER_NUMBER_KEY("features.toy_seed", features.toy_seed, std::uint64_t),
      {"synth.backgrounds", {[](RunConfig& c, const std::string& v) { c.synth.backgrounds = trim(v); },
                             [](const RunConfig& c) { return c.synth.backgrounds.string(); }}},
      {"synth.out", {[](RunConfig& c, const std::string& v) { c.synth.out = trim(v); },
                     [](const RunConfig& c) { return c.synth.out.string(); }}},
      ERASER_NUMBER_KEY("synth.count", synth.count, int),
      ERASER_NUMBER_KEY("synth.texts_min", synth.texts_min, int),
      ERASER_NUMBER_KEY("synth.texts_max", synth.texts_max, int),
      ERASER_NUMBER_KEY("synth.seed", synth.seed, std::uint64_t),
      ERASER_NUMBER_KEY("synth.size", synth.size, int),
      ERASER_NUMBER_KEY("synth.max_text_frac", synth.max_text_frac, double),
      ERASER_NUMBER_KEY("metrics.tau", tau, double),
  };
  return table;
}

#undef ERASER_NUMBER_KEY

}  // namespace detail

inline std::vector<std::string> known_keys() {
  std::vector<std::string> k;
  for (const auto& [name, _] : detail::keys()) k.push_back(name);
  return k;
}

inline void set(RunConfig& c, const std::string& key, const std::string& value) {
  const auto it = detail::keys().find(key);
  if (it == detail::keys().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(c, value);
}

inline std::string get(const RunConfig& c, const std::string& key) {
  const auto it = detail::keys().find(key);
  if (it == detail::keys().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(c);
}

// Applies a `key=value` assignment as given on the command line.
inline void assign(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(c, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline void apply_text(RunConfig& c, std::istream& in, const std::string& origin) {
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    try {
      assign(c, body);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_file(RunConfig& c, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  apply_text(c, in, path.string());
}

// Every key with its effective value, in a form apply_file reads back.
inline std::string render(const RunConfig& c) {
  std::string out;
  for (const auto& [name, key] : detail::keys()) out += name + " = " + key.get(c) + "\n";
  return out;
}

inline void echo(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "effective_config.txt", std::ios::trunc);
  out << render(c);
  if (!out) throw std::runtime_error("cannot write " + (dir / "effective_config.txt").string());
}

}  // namespace eraser::config
