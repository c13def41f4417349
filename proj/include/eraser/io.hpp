#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/image.hpp"

// Dataset layout:
//   <root>/images/<id>.png   scene with text (input)
//   <root>/labels/<id>.png   text-free background (ground truth)
//   <root>/masks/<id>.png    single channel, 0 or 255
//   <root>/manifest.txt      one id per line
namespace eraser::io {

namespace fs = std::filesystem;

inline constexpr const char* kManifest = "manifest.txt";

inline ImageTensor from_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3);
  std::vector<float> v(reinterpret_cast<const float*>(f.datastart), reinterpret_cast<const float*>(f.dataend));
  return ImageTensor(f.rows, f.cols, 3, Range::Byte, std::move(v));
}

// 8-bit BGR (or gray for one channel) copy of an image in any range.
inline cv::Mat to_mat(const ImageTensor& img) {
  const ImageTensor b = quantize_bytes(to_range(img, Range::Byte));
  cv::Mat m(b.height(), b.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
  const auto& v = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<unsigned char>(v[i]);
  if (img.channels() == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  return m;
}

inline ImageTensor read_image(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("cannot read image " + path.string());
  return from_mat(m);
}

inline void write_image(const fs::path& path, const ImageTensor& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(img))) throw std::runtime_error("cannot write image " + path.string());
}

inline Mask read_mask(const fs::path& path) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("cannot read mask " + path.string());
  std::vector<std::uint8_t> v(static_cast<std::size_t>(m.rows) * m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) v[static_cast<std::size_t>(y) * m.cols + x] = m.at<unsigned char>(y, x) >= 128;
  return Mask(m.rows, m.cols, std::move(v));
}

inline void write_mask(const fs::path& path, const Mask& mask) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m.at<unsigned char>(y, x) = mask.at(y, x) ? 255 : 0;
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write mask " + path.string());
}

struct Dataset {
  fs::path root;
  std::vector<std::string> ids;

  fs::path image_path(const std::string& id) const { return root / "images" / (id + ".png"); }
  fs::path label_path(const std::string& id) const { return root / "labels" / (id + ".png"); }
  fs::path mask_path(const std::string& id) const { return root / "masks" / (id + ".png"); }
};

inline Dataset open_dataset(const fs::path& root) {
  const fs::path manifest = root / kManifest;
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  Dataset d{root, {}};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) d.ids.push_back(line);
  }
  return d;
}

inline Sample load_sample(const Dataset& d, const std::string& id) {
  try {
    Sample s{read_image(d.image_path(id)), read_image(d.label_path(id)), read_mask(d.mask_path(id)), id};
    validate(s);
    return s;
  } catch (const std::exception& e) {
    throw std::runtime_error("sample '" + id + "': " + e.what());
  }
}

inline void write_sample(const fs::path& root, const Sample& s) {
  validate(s);
  const Dataset d{root, {}};
  write_image(d.image_path(s.id), s.input);
  write_image(d.label_path(s.id), s.ground_truth);
  write_mask(d.mask_path(s.id), s.mask);
}

inline void write_manifest(const fs::path& root, const std::vector<std::string>& ids) {
  fs::create_directories(root);
  std::ofstream out(root / kManifest, std::ios::trunc);
  for (const auto& id : ids) out << id << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + root.string());
}

// Seeded Fisher-Yates order of 0..n-1.
inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

// Every sample in manifest order, or in a seeded shuffle of it.
inline std::vector<Sample> load_dataset(const fs::path& root, std::optional<std::uint64_t> shuffle_seed = {}) {
  const Dataset d = open_dataset(root);
  std::vector<Sample> out;
  if (shuffle_seed) {
    for (std::size_t i : shuffled_order(d.ids.size(), *shuffle_seed)) out.push_back(load_sample(d, d.ids[i]));
  } else {
    for (const auto& id : d.ids) out.push_back(load_sample(d, id));
  }
  return out;
}

}  // namespace eraser::io
