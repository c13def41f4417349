#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/archive.hpp"
#include "eraser/autograd.hpp"
#include "eraser/nn.hpp"
#include "eraser/ops.hpp"

namespace eraser {

// Frozen network whose intermediate activations feed the perceptual losses.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // image: (N,3,H,W) in the signed range. Returns one activation per tap.
  virtual std::vector<Var<T>> extract(const Var<T>& image) const = 0;
  virtual std::uint64_t parameter_hash() const { return 0; }
};

// VGG-style stack: blocks of 3×3 conv + ReLU followed by 2×2 max pooling,
// with a tap after every pool. Inputs are mapped from [-1,1] to ImageNet
// statistics first.
template <typename T>
class ConvFeatureExtractor final : public FeatureExtractor<T> {
 public:
  struct Block {
    int convs;
    int width;
  };

  // Fixed random weights with the pool1/pool2/pool3 tap geometry of VGG16.
  // Needs no downloads, so tests and desk-scale runs work offline.
  static ConvFeatureExtractor toy(std::vector<int> widths = {64, 128, 256}, std::uint64_t seed = 0x5eed) {
    std::vector<Block> blocks;
    for (int w : widths) blocks.push_back({1, w});
    ConvFeatureExtractor fx(blocks);
    std::mt19937_64 rng(seed);
    int in = 3;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      fx.convs_.push_back({nn::make_conv(fx.params_, layer_name(b, 0), in, blocks[b].width, 3, 1, 1, rng)});
      in = blocks[b].width;
    }
    fx.params_.set_requires_grad(false);
    return fx;
  }

  // VGG16 up to pool3, weights read from an archive produced by
  // tools/convert_vgg16.py. Fails here, not at loss time, when the weights
  // are unavailable or malformed.
  static ConvFeatureExtractor vgg16(const std::filesystem::path& weights) {
    if (!std::filesystem::exists(weights)) {
      throw std::runtime_error("VGG16 weights not found at " + weights.string() +
                               " (run tools/convert_vgg16.py to create them)");
    }
    const Archive archive = Archive::load(weights);
    if (archive.meta("format").value_or("") != "vgg16-features") {
      throw std::runtime_error(weights.string() + " is not a VGG16 feature archive");
    }
    ConvFeatureExtractor fx({{2, 64}, {2, 128}, {3, 256}});
    std::mt19937_64 rng(0);
    int in = 3;
    for (std::size_t b = 0; b < fx.blocks_.size(); ++b) {
      std::vector<nn::Conv2d<T>> layers;
      for (int l = 0; l < fx.blocks_[b].convs; ++l) {
        layers.push_back(nn::make_conv(fx.params_, layer_name(b, l), in, fx.blocks_[b].width, 3, 1, 1, rng));
        in = fx.blocks_[b].width;
      }
      fx.convs_.push_back(std::move(layers));
    }
    archive.load_parameters("", fx.params_);
    fx.params_.set_requires_grad(false);
    return fx;
  }

  std::vector<Var<T>> extract(const Var<T>& image) const override {
    if (image.value().ndim() != 4 || image.dim(1) != 3) {
      throw std::invalid_argument("feature extractor expects (N,3,H,W), got " + shape_string(image.shape()));
    }
    static const std::vector<T> mean{T(0.485), T(0.456), T(0.406)};
    static const std::vector<T> stdev{T(0.229), T(0.224), T(0.225)};
    std::vector<T> sc(3), sh(3);
    for (int c = 0; c < 3; ++c) {
      sc[c] = T(0.5) / stdev[c];
      sh[c] = (T(0.5) - mean[c]) / stdev[c];
    }
    Var<T> h = ops::channel_affine(image, sc, sh);
    std::vector<Var<T>> taps;
    for (const auto& block : convs_) {
      for (const auto& conv : block) h = ops::relu(conv(h));
      h = ops::max_pool2d(h, 2, 2, 0);
      taps.push_back(h);
    }
    return taps;
  }

  std::uint64_t parameter_hash() const override { return nn::parameter_hash(params_); }
  const nn::ParameterSet<T>& parameters() const { return params_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  explicit ConvFeatureExtractor(std::vector<Block> blocks) : blocks_(std::move(blocks)) {}

  static std::string layer_name(std::size_t block, int layer) {
    return "conv" + std::to_string(block + 1) + "_" + std::to_string(layer + 1);
  }

  std::vector<Block> blocks_;
  nn::ParameterSet<T> params_;
  std::vector<std::vector<nn::Conv2d<T>>> convs_;
};

}  // namespace eraser
