#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eraser/autograd.hpp"
#include "eraser/ops.hpp"

namespace eraser::nn {

// Ordered collection of named trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> value) {
    for (const auto& [existing, _] : entries_) {
      if (existing == name) throw std::logic_error("duplicate parameter name " + name);
    }
    Var<T> v(std::move(value), true);
    entries_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& [_, v] : entries_) v.set_requires_grad(on);
  }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : entries_) {
      if (n == name) return v;
    }
    throw std::out_of_range("no parameter named " + name);
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

// Normal(0, stddev) tensor drawn in double precision so float and double
// builds from the same seed hold the same values up to rounding.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.dim(0); }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 2;
  int pad = 1;

  Var<T> operator()(const Var<T>& x) const { return ops::conv_transpose2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.dim(1); }
};

// He-style initialisation scaled by `gain`; biases start at zero.
template <typename T>
Conv2d<T> make_conv(ParameterSet<T>& params, const std::string& name, int in, int out, int kernel, int stride,
                    int pad, std::mt19937_64& rng, double gain = std::sqrt(2.0), bool with_bias = true) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("conv " + name + ": channel counts must be positive");
  Conv2d<T> conv;
  const double stddev = gain / std::sqrt(static_cast<double>(in) * kernel * kernel);
  conv.weight = params.add(name + ".weight", normal_tensor<T>({out, in, kernel, kernel}, stddev, rng));
  if (with_bias) conv.bias = params.add(name + ".bias", Tensor<T>(Shape{out}));
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

template <typename T>
ConvTranspose2d<T> make_deconv(ParameterSet<T>& params, const std::string& name, int in, int out, int kernel,
                               int stride, int pad, std::mt19937_64& rng, double gain = std::sqrt(2.0)) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("deconv " + name + ": channel counts must be positive");
  ConvTranspose2d<T> conv;
  const double fan_in = static_cast<double>(in) * kernel * kernel / (stride * stride);
  conv.weight = params.add(name + ".weight", normal_tensor<T>({in, out, kernel, kernel}, gain / std::sqrt(fan_in), rng));
  conv.bias = params.add(name + ".bias", Tensor<T>(Shape{out}));
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

// FNV-1a over the raw bytes of every parameter; used to check which side of
// an adversarial step touched which weights.
template <typename T>
std::uint64_t parameter_hash(const ParameterSet<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, v] : params.entries()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.value().data());
    for (std::size_t i = 0; i < v.value().size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace eraser::nn
