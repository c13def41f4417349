#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eraser/tensor.hpp"

namespace eraser {

// Value range an ImageTensor declares for its samples.
enum class Range { Unit, Signed, Byte };

struct RangeBounds {
  double lo;
  double hi;
};

inline RangeBounds bounds_of(Range r) {
  switch (r) {
    case Range::Unit: return {0.0, 1.0};
    case Range::Signed: return {-1.0, 1.0};
    case Range::Byte: return {0.0, 255.0};
  }
  throw std::invalid_argument("unknown range tag");
}

inline std::string_view range_name(Range r) {
  switch (r) {
    case Range::Unit: return "unit";
    case Range::Signed: return "signed";
    case Range::Byte: return "byte";
  }
  throw std::invalid_argument("unknown range tag");
}

inline Range parse_range(std::string_view name) {
  if (name == "unit") return Range::Unit;
  if (name == "signed") return Range::Signed;
  if (name == "byte") return Range::Byte;
  throw std::invalid_argument("unknown range tag '" + std::string(name) + "'");
}

// H×W×C raster, channels interleaved, every value inside the declared range.
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(int height, int width, int channels, Range range, std::vector<float> values)
      : height_(height), width_(width), channels_(channels), range_(range), values_(std::move(values)) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("image channels must be 1 or 3");
    if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
      throw std::invalid_argument("image value count does not match " + std::to_string(height) + "x" +
                                  std::to_string(width) + "x" + std::to_string(channels));
    }
    const auto [lo, hi] = bounds_of(range);
    for (float v : values_) {
      if (!(v >= lo && v <= hi)) {
        throw std::domain_error("image value " + std::to_string(v) + " outside " + std::string(range_name(range)) +
                                " range");
      }
    }
  }

  static ImageTensor filled(int height, int width, int channels, Range range, float v) {
    return ImageTensor(height, width, channels, range,
                       std::vector<float>(static_cast<std::size_t>(height) * width * channels, v));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Range range() const { return range_; }
  std::size_t size() const { return values_.size(); }
  std::span<const float> values() const { return values_; }

  float at(int y, int x, int c) const {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  bool same_geometry(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  bool operator==(const ImageTensor&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Range range_ = Range::Unit;
  std::vector<float> values_;
};

// Binary H×W mask; 1 marks text.
class Mask {
 public:
  Mask() = default;

  Mask(int height, int width, std::vector<std::uint8_t> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("mask dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(height) * width) {
      throw std::invalid_argument("mask value count does not match dimensions");
    }
    for (auto v : values_) {
      if (v > 1) throw std::domain_error("mask values must be 0 or 1");
    }
  }

  static Mask zeros(int height, int width) {
    return Mask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0));
  }
  static Mask ones(int height, int width) {
    return Mask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::span<const std::uint8_t> values() const { return values_; }
  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values_) n += v;
    return n;
  }
  double fraction() const { return static_cast<double>(count()) / static_cast<double>(values_.size()); }

  bool operator==(const Mask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
};

struct Sample {
  ImageTensor input;
  ImageTensor ground_truth;
  Mask mask;
  std::string id;
};

inline void validate(const Sample& s) {
  if (!s.input.same_geometry(s.ground_truth)) {
    throw std::invalid_argument("sample " + s.id + ": input and ground truth differ in shape");
  }
  if (s.mask.height() != s.input.height() || s.mask.width() != s.input.width()) {
    throw std::invalid_argument("sample " + s.id + ": mask size differs from image size");
  }
  if (s.input.range() != s.ground_truth.range()) {
    throw std::invalid_argument("sample " + s.id + ": input and ground truth differ in range");
  }
}

// True when input and ground truth agree exactly wherever the mask is 0.
inline bool outside_mask_identical(const Sample& s) {
  const int c = s.input.channels();
  for (int y = 0; y < s.mask.height(); ++y)
    for (int x = 0; x < s.mask.width(); ++x) {
      if (s.mask.at(y, x)) continue;
      for (int ch = 0; ch < c; ++ch) {
        if (s.input.at(y, x, ch) != s.ground_truth.at(y, x, ch)) return false;
      }
    }
  return true;
}

// Affine remap between value ranges.
inline ImageTensor to_range(const ImageTensor& img, Range target) {
  const auto [slo, shi] = bounds_of(img.range());
  const auto [tlo, thi] = bounds_of(target);
  if (img.range() == target) return img;
  std::vector<float> out(img.size());
  const double scale = (thi - tlo) / (shi - slo);
  auto src = img.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = (static_cast<double>(src[i]) - slo) * scale + tlo;
    out[i] = static_cast<float>(std::clamp(v, tlo, thi));
  }
  return ImageTensor(img.height(), img.width(), img.channels(), target, std::move(out));
}

// Rounds a byte-range image to integral gray levels.
inline ImageTensor quantize_bytes(const ImageTensor& img) {
  ImageTensor b = to_range(img, Range::Byte);
  std::vector<float> out(b.values().begin(), b.values().end());
  for (auto& v : out) v = std::round(v);
  return ImageTensor(b.height(), b.width(), b.channels(), Range::Byte, std::move(out));
}

// Block-max downsampling by an integer factor; a block containing any text
// pixel stays text.
inline Mask downsample_mask(const Mask& mask, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (mask.height() % factor != 0 || mask.width() % factor != 0) {
    throw std::invalid_argument("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                                " is not divisible by " + std::to_string(factor));
  }
  const int h = mask.height() / factor, w = mask.width() / factor;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      auto& o = out[static_cast<std::size_t>(y / factor) * w + x / factor];
      o = static_cast<std::uint8_t>(o | mask.at(y, x));
    }
  return Mask(h, w, std::move(out));
}

// Block-mean downsampling by an integer factor.
inline ImageTensor area_downsample(const ImageTensor& img, int factor) {
  if (factor < 1 || img.height() % factor != 0 || img.width() % factor != 0) {
    throw std::invalid_argument("image is not divisible by " + std::to_string(factor));
  }
  const int h = img.height() / factor, w = img.width() / factor, c = img.channels();
  std::vector<double> acc(static_cast<std::size_t>(h) * w * c, 0.0);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int ch = 0; ch < c; ++ch) acc[(static_cast<std::size_t>(y / factor) * w + x / factor) * c + ch] += img.at(y, x, ch);
  std::vector<float> out(acc.size());
  const double inv = 1.0 / (factor * factor);
  const auto [lo, hi] = bounds_of(img.range());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::clamp(acc[i] * inv, lo, hi));
  return ImageTensor(h, w, c, img.range(), std::move(out));
}

// mask ⊙ out + (1 − mask) ⊙ gt, the mask broadcast over channels.
inline ImageTensor compose(const ImageTensor& out, const ImageTensor& gt, const Mask& mask) {
  if (!out.same_geometry(gt) || out.range() != gt.range()) {
    throw std::invalid_argument("compose: output and ground truth differ in shape or range");
  }
  if (mask.height() != out.height() || mask.width() != out.width()) {
    throw std::invalid_argument("compose: mask size differs from image size");
  }
  std::vector<float> res(out.size());
  const int c = out.channels();
  auto ov = out.values();
  auto gv = gt.values();
  for (std::size_t i = 0; i < res.size(); ++i) res[i] = mask.values()[i / c] ? ov[i] : gv[i];
  return ImageTensor(out.height(), out.width(), c, out.range(), std::move(res));
}

struct MaskLevel {
  int downsample;  // 4, 2 or 1: the level is 1/downsample of the base size
  Mask mask;
};

// Masks aligned with the quarter, half and full generator outputs.
struct MaskPyramid {
  std::vector<MaskLevel> levels;
};

inline MaskPyramid build_mask_pyramid(const Mask& mask) {
  MaskPyramid p;
  for (int f : {4, 2, 1}) p.levels.push_back({f, f == 1 ? mask : downsample_mask(mask, f)});
  return p;
}

// ---------------------------------------------------------------------------
// Conversions between images and network batches (NCHW, signed range).

template <typename T>
Tensor<T> to_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  const auto& first = images.front();
  const int n = static_cast<int>(images.size()), c = first.channels(), h = first.height(), w = first.width();
  Tensor<T> t(Shape{n, c, h, w});
  for (int i = 0; i < n; ++i) {
    if (!images[i].same_geometry(first)) throw std::invalid_argument("batch images differ in shape");
    const ImageTensor s = to_range(images[i], Range::Signed);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) t.at(i, ch, y, x) = static_cast<T>(s.at(y, x, ch));
  }
  return t;
}

template <typename T>
Tensor<T> to_batch(std::span<const Mask> masks) {
  if (masks.empty()) throw std::invalid_argument("empty mask batch");
  const int n = static_cast<int>(masks.size()), h = masks[0].height(), w = masks[0].width();
  Tensor<T> t(Shape{n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    if (masks[i].height() != h || masks[i].width() != w) throw std::invalid_argument("batch masks differ in shape");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(i, 0, y, x) = static_cast<T>(masks[i].at(y, x));
  }
  return t;
}

// Extracts batch entry `index` of a signed-range NCHW tensor, clamping to
// the range.
template <typename T>
ImageTensor from_batch(const Tensor<T>& t, int index) {
  require_4d(t, "from_batch");
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  std::vector<float> out(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<float>(std::clamp<double>(t.at(index, ch, y, x), -1.0, 1.0));
      }
  return ImageTensor(h, w, c, Range::Signed, std::move(out));
}

}  // namespace eraser
