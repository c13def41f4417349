#pragma once

// Small in-memory samples: a smooth random background with a few solid
// strokes painted onto the input where the mask is set.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "eraser/image.hpp"

namespace eraser::testing {

inline Sample stroke_sample(int size, std::uint64_t seed, const std::string& id) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 1 + 3 * u(rng), fy = 1 + 3 * u(rng), ph = 6.28 * u(rng);
  std::vector<float> gt(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.35 * std::sin(fx * x / size * 6.28 + ph + c) * std::cos(fy * y / size * 6.28);
        gt[(static_cast<std::size_t>(y) * size + x) * 3 + c] = static_cast<float>(std::round(255 * v));
      }
  std::vector<float> in = gt;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(size) * size, 0);
  std::uniform_int_distribution<int> pos(size / 8, size - size / 4);
  const float color[3] = {static_cast<float>(std::round(255 * u(rng))), static_cast<float>(std::round(255 * u(rng))),
                          static_cast<float>(std::round(255 * u(rng)))};
  for (int stroke = 0; stroke < 3; ++stroke) {
    const int y0 = pos(rng), x0 = pos(rng);
    const int len = size / 8, thick = std::max(1, size / 64);
    const bool vertical = stroke % 2 == 1;
    for (int a = 0; a < len; ++a)
      for (int b = 0; b < thick; ++b) {
        const int y = vertical ? y0 + a : y0 + b, x = vertical ? x0 + b : x0 + a;
        const std::size_t p = static_cast<std::size_t>(y) * size + x;
        mask[p] = 1;
        for (int c = 0; c < 3; ++c) in[p * 3 + c] = color[c];
      }
  }
  return Sample{ImageTensor(size, size, 3, Range::Byte, in), ImageTensor(size, size, 3, Range::Byte, gt),
                Mask(size, size, mask), id};
}

inline std::vector<Sample> stroke_samples(int count, int size, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(stroke_sample(size, seed * 1000 + i, "s" + std::to_string(i)));
  return out;
}

}  // namespace eraser::testing
