#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/autograd.hpp"
#include "eraser/image.hpp"
#include "eraser/nn.hpp"
#include "eraser/ops.hpp"

namespace eraser {

// Patch critic layer stack: three stride-2 and two stride-1 4×4 convolutions.
struct PatchLayerSpec {
  int kernel;
  int stride;
  int pad;  // padding the layer would carry in a per-layer padded stack
};

inline constexpr std::array<PatchLayerSpec, 5> kPatchLayers{{{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}}};

// Where each output entry looks: entry i covers input rows
// [i·stride − offset, i·stride − offset + field).
struct PatchGeometry {
  int field = 0;
  int stride = 0;
  int offset = 0;

  int grid_size(int image_size) const {
    const int span = image_size + 2 * offset - field;
    if (span < 0 || span % stride != 0) {
      throw std::invalid_argument("image size " + std::to_string(image_size) + " does not tile into " +
                                  std::to_string(field) + "-pixel patches at stride " + std::to_string(stride));
    }
    return span / stride + 1;
  }
  int window_start(int index) const { return index * stride - offset; }
};

inline constexpr PatchGeometry compute_patch_geometry() {
  PatchGeometry g{1, 1, 0};
  for (const auto& l : kPatchLayers) {
    g.field += (l.kernel - 1) * g.stride;
    g.offset += l.pad * g.stride;
    g.stride *= l.stride;
  }
  return g;
}

inline constexpr PatchGeometry kPatchGeometry = compute_patch_geometry();
static_assert(kPatchGeometry.field == 70 && kPatchGeometry.stride == 8 && kPatchGeometry.offset == 23);

// Per-patch realness labels: 0 where the patch window holds any text pixel.
struct PatchLabelMap {
  int size = 0;                     // S
  std::vector<std::uint8_t> label;  // S×S, row-major
  std::vector<double> coverage;     // fraction of the window's in-image pixels that are text

  std::uint8_t at(int i, int j) const { return label[static_cast<std::size_t>(i) * size + j]; }
  double coverage_at(int i, int j) const { return coverage[static_cast<std::size_t>(i) * size + j]; }
};

inline PatchLabelMap label_map(const Mask& mask, const PatchGeometry& geo = kPatchGeometry) {
  if (mask.height() != mask.width()) throw std::invalid_argument("label_map expects a square mask");
  const int h = mask.height(), w = mask.width();
  const int s = geo.grid_size(h);
  // Summed-area table with a zero border row/column.
  std::vector<std::int64_t> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      sat[(y + 1) * (w + 1) + x + 1] =
          mask.at(y, x) + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
    }
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  PatchLabelMap m;
  m.size = s;
  m.label.resize(static_cast<std::size_t>(s) * s);
  m.coverage.resize(m.label.size());
  for (int i = 0; i < s; ++i) {
    const int y0 = clampi(geo.window_start(i), 0, h), y1 = clampi(geo.window_start(i) + geo.field, 0, h);
    for (int j = 0; j < s; ++j) {
      const int x0 = clampi(geo.window_start(j), 0, w), x1 = clampi(geo.window_start(j) + geo.field, 0, w);
      const std::int64_t sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] +
                               sat[y0 * (w + 1) + x0];
      m.label[static_cast<std::size_t>(i) * s + j] = sum > 0 ? 0 : 1;
      // Interior windows hold field² pixels; border windows only count the
      // part that lies inside the image.
      const double area = static_cast<double>(y1 - y0) * (x1 - x0);
      m.coverage[static_cast<std::size_t>(i) * s + j] = static_cast<double>(sum) / area;
    }
  }
  return m;
}

struct DiscriminatorConfig {
  std::array<int, 4> widths{64, 128, 256, 512};
  double leaky_slope = 0.2;
  int image_size = 512;

  void validate() const {
    for (int w : widths) {
      if (w <= 0) throw std::invalid_argument("discriminator widths must be positive");
    }
    if (leaky_slope < 0) throw std::invalid_argument("discriminator leaky_slope must be >= 0");
    kPatchGeometry.grid_size(image_size);
  }
};

// Conditional patch critic D(x, y): x and y concatenated to six channels,
// zero-padded once by the stack's total padding, then run through valid
// convolutions. Returns sigmoid scores shaped (N,1,S,S).
template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    int in = 6;
    for (std::size_t l = 0; l < kPatchLayers.size(); ++l) {
      const bool last = l + 1 == kPatchLayers.size();
      const int out = last ? 1 : config_.widths[l];
      layers_.push_back(nn::make_conv(params_, "layer" + std::to_string(l + 1), in, out, kPatchLayers[l].kernel,
                                      kPatchLayers[l].stride, 0, rng, last ? 1.0 : std::sqrt(2.0)));
      in = out;
    }
  }

  const DiscriminatorConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }
  int grid_size() const { return kPatchGeometry.grid_size(config_.image_size); }

  Var<T> forward(const Var<T>& x, const Var<T>& y) const {
    for (const auto* v : {&x, &y}) {
      const Shape& s = v->shape();
      if (s.size() != 4 || s[1] != 3 || s[2] != config_.image_size || s[3] != config_.image_size) {
        throw std::invalid_argument("discriminator expects (N,3," + std::to_string(config_.image_size) + "," +
                                    std::to_string(config_.image_size) + ") inputs, got " + shape_string(s));
      }
    }
    return forward_padded(ops::zero_pad2d(ops::concat_channels(x, y), kPatchGeometry.offset));
  }

  // Runs the critic on an already padded six-channel tensor.
  Var<T> forward_padded(const Var<T>& padded) const {
    Var<T> h = padded;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h);
      h = l + 1 == layers_.size() ? ops::sigmoid(h) : ops::leaky_relu(h, static_cast<T>(config_.leaky_slope));
    }
    return h;
  }

 private:
  DiscriminatorConfig config_;
  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> layers_;
};

namespace detail {

inline void check_grid(const Shape& s, std::span<const PatchLabelMap> labels) {
  if (s.size() != 4 || s[1] != 1 || s[2] != s[3] || static_cast<std::size_t>(s[0]) != labels.size()) {
    throw std::invalid_argument("prediction grid " + shape_string(s) + " does not match label batch");
  }
  for (const auto& l : labels) {
    if (l.size != s[2]) throw std::invalid_argument("label map size differs from prediction grid");
  }
}

template <typename T>
Tensor<T> text_patch_weights(const Shape& s, std::span<const PatchLabelMap> labels) {
  Tensor<T> w(s);
  const std::size_t cells = static_cast<std::size_t>(s[2]) * s[3];
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t c = 0; c < cells; ++c) {
      w[i * cells + c] = static_cast<T>(labels[i].coverage[c] * (1.0 - labels[i].label[c]));
    }
  return w;
}

}  // namespace detail

// −Σ_i coverage_i · (1 − L_i) · log(P_i) per image, averaged over the batch.
// Only text-covered patches contribute.
template <typename T>
Var<T> generator_adversarial_loss(const Var<T>& preds, std::span<const PatchLabelMap> labels) {
  detail::check_grid(preds.shape(), labels);
  const Tensor<T> w = detail::text_patch_weights<T>(preds.shape(), labels);
  return ops::scale(ops::weighted_neg_log(preds, w, false), T(1) / static_cast<T>(labels.size()));
}

// Critic objective: mean over all patches of −log P_real, plus the
// coverage-weighted mean over text patches of −log(1 − P_fake). Non-text
// patches of the generated image carry no penalty. Averaged over the batch.
template <typename T>
Var<T> discriminator_loss(const Var<T>& preds_real, const Var<T>& preds_fake, std::span<const PatchLabelMap> labels) {
  detail::check_grid(preds_real.shape(), labels);
  detail::check_grid(preds_fake.shape(), labels);
  const Shape& s = preds_real.shape();
  const std::size_t cells = static_cast<std::size_t>(s[2]) * s[3];
  const T inv_batch = T(1) / static_cast<T>(labels.size());

  Tensor<T> real_w(s, inv_batch / static_cast<T>(cells));
  Tensor<T> fake_w = detail::text_patch_weights<T>(s, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    T total = 0;
    for (std::size_t c = 0; c < cells; ++c) total += fake_w[i * cells + c];
    for (std::size_t c = 0; c < cells; ++c) {
      fake_w[i * cells + c] = total > T(0) ? fake_w[i * cells + c] * inv_batch / total : T(0);
    }
  }
  return ops::add(ops::weighted_neg_log(preds_real, real_w, false), ops::weighted_neg_log(preds_fake, fake_w, true));
}

}  // namespace eraser
