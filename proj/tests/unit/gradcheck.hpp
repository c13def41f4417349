#pragma once

// Central finite-difference oracle, kept independent of the backward pass it
// checks: it only ever evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "eraser/autograd.hpp"

namespace eraser::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
};

// Compares d loss / d x from backward() with (f(x+h) − f(x−h)) / 2h for every
// coordinate (or `max_coords` random coordinates when positive).
inline GradCheckResult check_gradient(const std::function<Var<double>(const Var<double>&)>& loss,
                                      const Tensor<double>& point, double step = 1e-3, std::size_t max_coords = 0,
                                      std::uint64_t seed = 1) {
  Var<double> x(point, true);
  Var<double> out = loss(x);
  backward(out);
  const Tensor<double> analytic = x.has_grad() ? x.grad() : Tensor<double>(point.shape());

  std::vector<std::size_t> coords(point.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (max_coords > 0 && max_coords < coords.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }

  GradCheckResult r;
  NoGradGuard guard;
  for (std::size_t i : coords) {
    Tensor<double> plus = point, minus = point;
    plus[i] += step;
    minus[i] -= step;
    const double fp = loss(Var<double>(plus)).value().item();
    const double fm = loss(Var<double>(minus)).value().item();
    const double numeric = (fp - fm) / (2 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    r.max_relative_error = std::max(r.max_relative_error, std::abs(analytic[i] - numeric) / denom);
    r.max_abs_analytic = std::max(r.max_abs_analytic, std::abs(analytic[i]));
    ++r.checked;
  }
  return r;
}

inline Tensor<double> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Random tensor whose horizontal and vertical neighbour differences all
// exceed `margin`, so a central-difference stencil never straddles a kink of
// |·| in the total-variation term.
inline Tensor<double> tv_safe_tensor(Shape shape, std::mt19937_64& rng, double margin) {
  for (;;) {
    Tensor<double> t = uniform_tensor(shape, rng);
    const int planes = shape[0] * shape[1], h = shape[2], w = shape[3];
    bool ok = true;
    for (int p = 0; p < planes && ok; ++p)
      for (int y = 0; y < h && ok; ++y)
        for (int x = 0; x < w && ok; ++x) {
          const double v = t[(static_cast<std::size_t>(p) * h + y) * w + x];
          if (y + 1 < h && std::abs(v - t[(static_cast<std::size_t>(p) * h + y + 1) * w + x]) < margin) ok = false;
          if (x + 1 < w && std::abs(v - t[(static_cast<std::size_t>(p) * h + y) * w + x + 1]) < margin) ok = false;
        }
    if (ok) return t;
  }
}

// Offsets every element of `base` by a random amount with magnitude in
// [margin, 1] and random sign, so |x − base| stays away from 0.
inline Tensor<double> offset_from(const Tensor<double>& base, std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t = base;
  for (auto& v : t.values()) v += (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return t;
}

}  // namespace eraser::testing
