#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/autograd.hpp"
#include "eraser/nn.hpp"
#include "eraser/ops.hpp"

namespace eraser {

struct GeneratorConfig {
  int base_channels = 64;
  double elu_alpha = 1.0;
  // Input resolution; must be a multiple of the conv pathway's downsampling.
  int image_size = 512;
  // Channel reduction inside each lateral transforming block.
  int lateral_shrink = 4;

  void validate() const {
    if (base_channels <= 0) throw std::invalid_argument("generator base_channels must be positive");
    if (elu_alpha <= 0) throw std::invalid_argument("generator elu_alpha must be positive");
    if (lateral_shrink <= 0) throw std::invalid_argument("generator lateral_shrink must be positive");
    if (image_size <= 0 || image_size % 32 != 0) {
      throw std::invalid_argument("generator image_size must be a positive multiple of 32");
    }
  }
};

// Output heads sit at 1/4, 1/2 and full resolution.
inline constexpr std::array<int, 3> kOutputDownsample{4, 2, 1};

template <typename T>
struct MultiScaleOutput {
  Var<T> quarter;
  Var<T> half;
  Var<T> full;
  Var<T> score_map;  // sigmoid text/non-text scores at 1/32 resolution
};

// Shrink (1×1) → 3×3 → 3×3 → expand (1×1), ELU between layers. Channel
// count and spatial size are preserved.
template <typename T>
struct LateralTransform {
  nn::Conv2d<T> shrink;
  nn::Conv2d<T> conv_a;
  nn::Conv2d<T> conv_b;
  nn::Conv2d<T> expand;
  T alpha = T(1);

  int channels() const { return expand.out_channels(); }

  std::array<int, 4> internal_widths() const {
    return {shrink.out_channels(), conv_a.out_channels(), conv_b.out_channels(), expand.out_channels()};
  }

  Var<T> operator()(const Var<T>& features) const {
    if (features.value().ndim() != 4 || features.dim(1) != shrink.weight.dim(1)) {
      throw std::invalid_argument("lateral transform expects " + std::to_string(shrink.weight.dim(1)) +
                                  " channels, got " + shape_string(features.shape()));
    }
    Var<T> h = ops::elu(shrink(features), alpha);
    h = ops::elu(conv_a(h), alpha);
    h = ops::elu(conv_b(h), alpha);
    return expand(h);
  }
};

template <typename T>
LateralTransform<T> make_lateral(nn::ParameterSet<T>& params, const std::string& name, int channels, int shrink_ratio,
                                 T alpha, std::mt19937_64& rng, bool zero_expand = false) {
  const int inner = std::max(1, channels / shrink_ratio);
  LateralTransform<T> t;
  t.shrink = nn::make_conv(params, name + ".shrink", channels, inner, 1, 1, 0, rng);
  t.conv_a = nn::make_conv(params, name + ".conv_a", inner, inner, 3, 1, 1, rng);
  t.conv_b = nn::make_conv(params, name + ".conv_b", inner, inner, 3, 1, 1, rng);
  t.expand = nn::make_conv(params, name + ".expand", inner, channels, 1, 1, 0, rng, zero_expand ? 0.0 : 0.5);
  t.alpha = alpha;
  return t;
}

// ResNet basic block without normalisation: relu(branch(x) + skip(x)). The
// branch's second convolution starts small so the unnormalised stack stays
// well-conditioned at initialisation.
template <typename T>
struct ResidualBlock {
  nn::Conv2d<T> conv1;
  nn::Conv2d<T> conv2;
  std::optional<nn::Conv2d<T>> projection;

  Var<T> operator()(const Var<T>& x) const {
    Var<T> branch = conv2(ops::relu(conv1(x)));
    Var<T> skip = projection ? (*projection)(x) : x;
    return ops::relu(ops::add(branch, skip));
  }
};

template <typename T>
ResidualBlock<T> make_residual(nn::ParameterSet<T>& params, const std::string& name, int in, int out, int stride,
                               std::mt19937_64& rng) {
  ResidualBlock<T> b;
  b.conv1 = nn::make_conv(params, name + ".conv1", in, out, 3, stride, 1, rng);
  b.conv2 = nn::make_conv(params, name + ".conv2", out, out, 3, 1, 1, rng, 0.25);
  if (stride != 1 || in != out) b.projection = nn::make_conv(params, name + ".proj", in, out, 1, stride, 0, rng, 1.0);
  return b;
}

// Intermediate activations exposed for inspection and tests.
template <typename T>
struct GeneratorTrace {
  std::array<Var<T>, 4> residual;  // Residual2b .. Residual5b (strides 4, 8, 16, 32)
  std::array<Var<T>, 4> lateral;   // transformed taps, same order
  std::array<Var<T>, 5> deconv;    // activated deconvolution stage outputs (strides 16 .. 1)
};

// Fully convolutional text eraser: ResNet18-style convolution pathway, five
// stride-2 transposed convolutions back to full resolution, and four lateral
// connections summing transformed residual taps into the deconvolution stage
// of matching size.
template <typename T>
class Generator {
 public:
  static constexpr int kDeconvStages = 5;
  static constexpr int kDeconvKernel = 4;
  static constexpr int kDeconvStride = 2;
  static constexpr int kDeconvPad = 1;

  Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const int b = config_.base_channels;
    const T alpha = static_cast<T>(config_.elu_alpha);
    const std::array<int, 4> widths{b, 2 * b, 4 * b, 8 * b};

    stem_ = nn::make_conv(params_, "stem", 3, b, 7, 2, 3, rng);
    int in = b;
    for (int stage = 0; stage < 4; ++stage) {
      const std::string name = "res" + std::to_string(stage + 2);
      stages_[stage][0] = make_residual(params_, name + "a", in, widths[stage], stage == 0 ? 1 : 2, rng);
      stages_[stage][1] = make_residual(params_, name + "b", widths[stage], widths[stage], 1, rng);
      in = widths[stage];
    }

    reduce_ = nn::make_conv(params_, "tail.reduce", 8 * b, 8 * b, 1, 1, 0, rng);
    score_ = nn::make_conv(params_, "tail.score", 8 * b, 1, 1, 1, 0, rng, 1.0);

    for (int stage = 0; stage < 4; ++stage) {
      laterals_[stage] = make_lateral(params_, "lateral" + std::to_string(stage + 2), widths[stage],
                                      config_.lateral_shrink, alpha, rng);
    }

    const int half_width = std::max(1, b / 2);
    const std::array<int, 6> deconv_widths{8 * b, 4 * b, 2 * b, b, half_width, 3};
    for (int s = 0; s < kDeconvStages; ++s) {
      const bool last = s == kDeconvStages - 1;
      deconv_[s] = nn::make_deconv(params_, "deconv" + std::to_string(s + 1), deconv_widths[s], deconv_widths[s + 1],
                                   kDeconvKernel, kDeconvStride, kDeconvPad, rng, last ? 0.5 : std::sqrt(2.0));
    }
    head_quarter_ = nn::make_conv(params_, "head.quarter", b, 3, 1, 1, 0, rng, 0.5);
    head_half_ = nn::make_conv(params_, "head.half", half_width, 3, 1, 1, 0, rng, 0.5);
  }

  const GeneratorConfig& config() const { return config_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }
  const std::array<LateralTransform<T>, 4>& laterals() const { return laterals_; }

  // Stride of every downsampling step in the convolution pathway.
  static std::vector<int> conv_pathway_strides() { return {2, 2, 1, 2, 2, 2}; }

  MultiScaleOutput<T> forward(const Var<T>& input, GeneratorTrace<T>* trace = nullptr) const {
    const Shape& s = input.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != config_.image_size || s[3] != config_.image_size) {
      throw std::invalid_argument("generator expects (N,3," + std::to_string(config_.image_size) + "," +
                                  std::to_string(config_.image_size) + ") input, got " + shape_string(s));
    }
    const T alpha = static_cast<T>(config_.elu_alpha);

    Var<T> h = ops::max_pool2d(ops::relu(stem_(input)), 3, 2, 1);
    std::array<Var<T>, 4> taps;
    for (int stage = 0; stage < 4; ++stage) {
      h = stages_[stage][1](stages_[stage][0](h));
      taps[stage] = h;
    }

    MultiScaleOutput<T> out;
    out.score_map = ops::sigmoid(score_(taps[3]));

    std::array<Var<T>, 4> lat;
    for (int stage = 0; stage < 4; ++stage) lat[stage] = laterals_[stage](taps[stage]);

    std::array<Var<T>, 5> stage_out;
    Var<T> x = ops::add(ops::elu(reduce_(taps[3]), alpha), lat[3]);
    for (int s = 0; s < kDeconvStages; ++s) {
      Var<T> up = deconv_[s](x);
      if (s == kDeconvStages - 1) {
        stage_out[s] = ops::tanh(up);
        break;
      }
      up = ops::elu(up, alpha);
      stage_out[s] = up;
      // Stages 0..2 land at strides 16, 8, 4 and meet Residual4b..2b.
      x = s < 3 ? ops::add(up, lat[2 - s]) : up;
      if (s == 2) out.quarter = ops::tanh(head_quarter_(x));
      if (s == 3) out.half = ops::tanh(head_half_(x));
    }
    out.full = stage_out[4];

    if (trace) {
      trace->residual = taps;
      trace->lateral = lat;
      trace->deconv = stage_out;
    }
    return out;
  }

 private:
  GeneratorConfig config_;
  nn::ParameterSet<T> params_;
  nn::Conv2d<T> stem_;
  std::array<std::array<ResidualBlock<T>, 2>, 4> stages_;
  nn::Conv2d<T> reduce_;
  nn::Conv2d<T> score_;
  std::array<LateralTransform<T>, 4> laterals_;
  std::array<nn::ConvTranspose2d<T>, kDeconvStages> deconv_;
  nn::Conv2d<T> head_quarter_;
  nn::Conv2d<T> head_half_;
};

}  // namespace eraser
