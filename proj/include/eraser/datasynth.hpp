#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/image.hpp"
#include "eraser/io.hpp"

namespace eraser::synth {

namespace fs = std::filesystem;

// Stroke fonts compiled into OpenCV; a TextSpec's font id indexes this table.
inline constexpr std::array<int, 6> kFonts = {
    cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX,       cv::FONT_HERSHEY_COMPLEX,
    cv::FONT_HERSHEY_TRIPLEX, cv::FONT_HERSHEY_SCRIPT_SIMPLEX, cv::FONT_HERSHEY_PLAIN,
};

// Axis-aligned placement region in pixels; an empty region means the whole image.
struct Region {
  int x = 0, y = 0, width = 0, height = 0;
  bool empty() const { return width <= 0 || height <= 0; }
};

struct TextSpec {
  std::string content;
  int font = 0;
  double size_min = 24;  // cap height in pixels
  double size_max = 48;
  std::array<std::uint8_t, 3> color{255, 255, 255};  // RGB
  double rotation_min = -15;  // degrees
  double rotation_max = 15;
  double opacity = 1.0;
  Region placement;

  void validate() const {
    if (font < 0 || font >= static_cast<int>(kFonts.size())) {
      throw std::invalid_argument("text font id " + std::to_string(font) + " is not in 0.." +
                                  std::to_string(kFonts.size() - 1));
    }
    if (!(size_min > 0 && size_min <= size_max)) throw std::invalid_argument("text size range must satisfy 0 < min <= max");
    if (!(rotation_min <= rotation_max)) throw std::invalid_argument("text rotation range must satisfy min <= max");
    if (!(opacity > 0 && opacity <= 1)) throw std::invalid_argument("text opacity must lie in (0, 1]");
  }
};

struct Rejection {
  std::size_t spec;
  std::string reason;
};

struct SynthOptions {
  int size = 512;              // output side length
  double max_text_frac = 0.5;  // upper bound on mask area fraction
};

struct SynthResult {
  Sample sample;
  std::vector<Rejection> rejected;
};

// Center-crops to a square and resizes to size×size, byte range.
inline ImageTensor prepare_background(const ImageTensor& background, int size) {
  const cv::Mat bgr = io::to_mat(background);
  const int side = std::min(bgr.rows, bgr.cols);
  const cv::Mat square = bgr(cv::Rect((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side));
  cv::Mat out;
  if (side == size) {
    out = square.clone();
  } else {
    cv::resize(square, out, cv::Size(size, size), 0, 0, side > size ? cv::INTER_AREA : cv::INTER_CUBIC);
  }
  return io::from_mat(out);
}

namespace detail {

struct Glyphs {
  cv::Mat coverage;  // CV_8UC1, rotated rendering on a local canvas
  cv::Rect box;      // nonzero extent inside `coverage`
};

inline Glyphs render(const std::string& text, int font, double cap_height, double degrees) {
  int base = 0;
  const cv::Size unit = cv::getTextSize(text, kFonts[font], 1.0, 1, &base);
  const double scale = cap_height / std::max(1, unit.height);
  const int thickness = std::max(1, static_cast<int>(std::lround(cap_height / 12)));
  const cv::Size sz = cv::getTextSize(text, kFonts[font], scale, thickness, &base);
  const int side = static_cast<int>(std::ceil(std::hypot(sz.width, sz.height + base))) + 4 * thickness + 4;
  cv::Mat canvas = cv::Mat::zeros(side, side, CV_8UC1);
  const cv::Point origin((side - sz.width) / 2, (side + sz.height - base) / 2);
  cv::putText(canvas, text, origin, kFonts[font], scale, cv::Scalar(255), thickness, cv::LINE_AA);
  const cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(side / 2.0f, side / 2.0f), degrees, 1.0);
  Glyphs g;
  cv::warpAffine(canvas, g.coverage, rot, canvas.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(0));
  std::vector<cv::Point> on;
  cv::findNonZero(g.coverage, on);
  if (!on.empty()) g.box = cv::boundingRect(on);
  return g;
}

}  // namespace detail

// Renders each spec onto the prepared background in order. Pixels whose glyph
// coverage exceeds one half join the mask and are blended with weight
// coverage·opacity; every other pixel keeps the background value, so input
// and ground truth agree exactly outside the mask.
inline SynthResult synthesize_sample(const ImageTensor& background, const std::vector<TextSpec>& specs,
                                     std::uint64_t seed, const SynthOptions& options = {}, std::string id = "sample") {
  if (options.size < 16) throw std::invalid_argument("synthesis size must be at least 16");
  if (!(options.max_text_frac > 0 && options.max_text_frac <= 1)) {
    throw std::invalid_argument("max text fraction must lie in (0, 1]");
  }
  const ImageTensor gt = quantize_bytes(prepare_background(background, options.size));
  const int n = options.size;
  std::vector<float> in(gt.values().begin(), gt.values().end());
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  std::size_t marked = 0;
  SynthResult result;
  std::mt19937_64 rng(seed);

  for (std::size_t s = 0; s < specs.size(); ++s) {
    const TextSpec& spec = specs[s];
    spec.validate();
    const double size = std::uniform_real_distribution<double>(spec.size_min, spec.size_max)(rng);
    const double angle = std::uniform_real_distribution<double>(spec.rotation_min, spec.rotation_max)(rng);
    const detail::Glyphs g = detail::render(spec.content, spec.font, size, angle);
    if (g.box.area() == 0) {
      result.rejected.push_back({s, "text '" + spec.content + "' renders no pixels"});
      continue;
    }
    Region r = spec.placement.empty() ? Region{0, 0, n, n} : spec.placement;
    const int rx0 = std::max(0, r.x), ry0 = std::max(0, r.y);
    const int rx1 = std::min(n, r.x + r.width), ry1 = std::min(n, r.y + r.height);
    if (rx1 - rx0 < g.box.width || ry1 - ry0 < g.box.height) {
      result.rejected.push_back({s, "text '" + spec.content + "' (" + std::to_string(g.box.width) + "x" +
                                        std::to_string(g.box.height) + " px) does not fit its placement region"});
      continue;
    }
    const int ox = std::uniform_int_distribution<int>(rx0, rx1 - g.box.width)(rng) - g.box.x;
    const int oy = std::uniform_int_distribution<int>(ry0, ry1 - g.box.height)(rng) - g.box.y;

    std::size_t added = 0;
    for (int y = g.box.y; y < g.box.y + g.box.height; ++y)
      for (int x = g.box.x; x < g.box.x + g.box.width; ++x) {
        const std::size_t p = static_cast<std::size_t>(y + oy) * n + (x + ox);
        added += g.coverage.at<unsigned char>(y, x) > 127 && !mask[p];
      }
    if (static_cast<double>(marked + added) > options.max_text_frac * n * n) {
      result.rejected.push_back({s, "text '" + spec.content + "' would push the text area above " +
                                        std::to_string(options.max_text_frac)});
      continue;
    }
    for (int y = g.box.y; y < g.box.y + g.box.height; ++y)
      for (int x = g.box.x; x < g.box.x + g.box.width; ++x) {
        const int cov = g.coverage.at<unsigned char>(y, x);
        if (cov <= 127) continue;
        const std::size_t p = static_cast<std::size_t>(y + oy) * n + (x + ox);
        const double w = cov / 255.0 * spec.opacity;
        for (int c = 0; c < 3; ++c) {
          float& v = in[p * 3 + c];
          v = static_cast<float>(std::round((1 - w) * v + w * spec.color[c]));
        }
        mask[p] = 1;
      }
    marked += added;
  }
  result.sample = Sample{ImageTensor(n, n, 3, Range::Byte, std::move(in)), gt, Mask(n, n, std::move(mask)),
                         std::move(id)};
  return result;
}

struct SynthConfig {
  fs::path backgrounds;
  fs::path out;
  int count = 1;
  int texts_min = 1;
  int texts_max = 4;
  std::uint64_t seed = 0;
  int size = 512;
  double max_text_frac = 0.5;

  void validate() const {
    if (backgrounds.empty()) throw std::invalid_argument("synth.backgrounds is required");
    if (out.empty()) throw std::invalid_argument("synth.out is required");
    if (count < 1) throw std::invalid_argument("synth.count must be >= 1");
    if (texts_min < 0 || texts_min > texts_max) throw std::invalid_argument("synth.texts_min must lie in 0..texts_max");
    if (size < 16) throw std::invalid_argument("synth.size must be >= 16");
    if (!(max_text_frac > 0 && max_text_frac <= 1)) throw std::invalid_argument("synth.max_text_frac must lie in (0, 1]");
  }
};

inline const std::vector<std::string>& word_list() {
  static const std::vector<std::string> words = {
      "EXIT", "OPEN",  "SALE", "CAFE",   "HOTEL", "PARK",  "STOP",    "2019",  "BUS 42", "Market",
      "Street", "welcome", "NO ENTRY", "Bakery", "Taxi", "Pharmacy", "Books", "24h", "Station", "Garden",
  };
  return words;
}

// Random text specs for an image of side `size`.
inline std::vector<TextSpec> random_specs(std::mt19937_64& rng, int count, int size) {
  std::vector<TextSpec> specs;
  std::uniform_int_distribution<std::size_t> word(0, word_list().size() - 1);
  std::uniform_int_distribution<int> font(0, static_cast<int>(kFonts.size()) - 1), byte(0, 255);
  std::uniform_real_distribution<double> opacity(0.75, 1.0);
  for (int i = 0; i < count; ++i) {
    TextSpec t;
    t.content = word_list()[word(rng)];
    t.font = font(rng);
    t.size_min = size * 0.04;
    t.size_max = size * 0.12;
    t.color = {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
               static_cast<std::uint8_t>(byte(rng))};
    t.opacity = opacity(rng);
    specs.push_back(std::move(t));
  }
  return specs;
}

inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth_%05d", index);
  return buf;
}

struct GenerateResult {
  std::vector<std::string> ids;
  std::vector<std::string> warnings;
};

// Writes `count` samples and the manifest under config.out. Backgrounds are
// taken from the directory in file-name order; unreadable files are skipped.
inline GenerateResult generate_dataset(const SynthConfig& config, std::ostream* log = nullptr) {
  config.validate();
  if (!fs::is_directory(config.backgrounds)) {
    throw std::runtime_error("background directory " + config.backgrounds.string() + " does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(config.backgrounds)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  GenerateResult result;
  std::vector<ImageTensor> backgrounds;
  for (const auto& f : files) {
    const cv::Mat m = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (m.empty()) {
      result.warnings.push_back("skipping unreadable background " + f.string());
      if (log) *log << "warning: " << result.warnings.back() << '\n';
      continue;
    }
    backgrounds.push_back(prepare_background(io::from_mat(m), config.size));
  }
  if (backgrounds.empty()) {
    throw std::runtime_error("no usable background images in " + config.backgrounds.string());
  }

  const SynthOptions options{config.size, config.max_text_frac};
  for (int i = 0; i < config.count; ++i) {
    std::mt19937_64 rng = sample_rng(config.seed, static_cast<std::uint64_t>(i));
    const auto& bg = backgrounds[std::uniform_int_distribution<std::size_t>(0, backgrounds.size() - 1)(rng)];
    const int texts = std::uniform_int_distribution<int>(config.texts_min, config.texts_max)(rng);
    const auto specs = random_specs(rng, texts, config.size);
    SynthResult r = synthesize_sample(bg, specs, rng(), options, sample_id(i));
    io::write_sample(config.out, r.sample);
    result.ids.push_back(r.sample.id);
  }
  io::write_manifest(config.out, result.ids);
  return result;
}

// Smooth colour gradients overlaid with random rectangles, circles and
// noise; used when no photographic backgrounds are at hand.
inline std::vector<fs::path> write_procedural_backgrounds(const fs::path& dir, int count, std::uint64_t seed,
                                                          int size = 512) {
  if (count < 1) throw std::invalid_argument("background count must be >= 1");
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng = sample_rng(seed ^ 0xb4c6b9a0u, static_cast<std::uint64_t>(i));
    std::uniform_int_distribution<int> byte(0, 255), pos(0, size - 1), len(size / 16, size / 3);
    const cv::Vec3d a(byte(rng), byte(rng), byte(rng)), b(byte(rng), byte(rng), byte(rng));
    const double angle = std::uniform_real_distribution<double>(0, 2 * M_PI)(rng);
    cv::Mat img(size, size, CV_8UC3);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t = 0.5 + 0.5 * ((x - size / 2.0) * std::cos(angle) + (y - size / 2.0) * std::sin(angle)) / size;
        const cv::Vec3d c = a * (1 - t) + b * t;
        img.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(c[0]), cv::saturate_cast<uchar>(c[1]),
                                            cv::saturate_cast<uchar>(c[2]));
      }
    const int shapes = std::uniform_int_distribution<int>(3, 8)(rng);
    for (int s = 0; s < shapes; ++s) {
      const cv::Scalar colour(byte(rng), byte(rng), byte(rng));
      const cv::Point p(pos(rng), pos(rng));
      if (rng() % 2) {
        cv::rectangle(img, cv::Rect(p.x, p.y, len(rng), len(rng)), colour, cv::FILLED);
      } else {
        cv::circle(img, p, len(rng) / 2, colour, cv::FILLED, cv::LINE_AA);
      }
    }
    std::normal_distribution<double> noise(0, 6);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        auto& px = img.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<uchar>(px[c] + noise(rng));
      }
    char name[32];
    std::snprintf(name, sizeof(name), "bg_%04d.png", i);
    const fs::path path = dir / name;
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write background " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace eraser::synth
