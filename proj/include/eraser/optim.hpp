#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/archive.hpp"
#include "eraser/nn.hpp"

namespace eraser {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("optimizer.learning_rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw std::invalid_argument("optimizer.beta1 must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("optimizer.beta2 must lie in [0, 1)");
    if (!(eps > 0)) throw std::invalid_argument("optimizer.eps must be > 0");
  }
};

// Bias-corrected adaptive moments. Parameters that received no gradient in a
// step keep both their value and their moments.
template <typename T>
class Adam {
 public:
  Adam(nn::ParameterSet<T>& params, const AdamConfig& config) : params_(&params), config_(config) {
    config_.validate();
    for (const auto& [name, v] : params.entries()) {
      m_.emplace_back(v.shape());
      v_.emplace_back(v.shape());
    }
  }

  const AdamConfig& config() const { return config_; }
  long steps() const { return steps_; }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T lr = static_cast<T>(config_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(config_.eps);
    auto& entries = params_->entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Var<T> param = entries[p].second;  // shares the node
      if (!param.has_grad()) continue;
      const Tensor<T>& g = param.grad();
      Tensor<T>& w = param.mutable_value();
      Tensor<T>& m = m_[p];
      Tensor<T>& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= lr * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  void save(Archive& ar, const std::string& prefix) const {
    ar.set_meta(prefix + "steps", std::to_string(steps_));
    const auto& entries = params_->entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      ar.put(prefix + "m/" + entries[p].first, m_[p]);
      ar.put(prefix + "v/" + entries[p].first, v_[p]);
    }
  }

  void load(const Archive& ar, const std::string& prefix) {
    steps_ = std::stol(ar.require_meta(prefix + "steps"));
    const auto& entries = params_->entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      m_[p] = ar.get<T>(prefix + "m/" + entries[p].first, entries[p].second.shape());
      v_[p] = ar.get<T>(prefix + "v/" + entries[p].first, entries[p].second.shape());
    }
  }

 private:
  nn::ParameterSet<T>* params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_, v_;
  long steps_ = 0;
};

}  // namespace eraser
