#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraser/autograd.hpp"
#include "eraser/features.hpp"
#include "eraser/generator.hpp"
#include "eraser/image.hpp"
#include "eraser/ops.hpp"

namespace eraser {

struct LossWeights {
  double alpha = 6.0;                               // non-text weight in the multiscale term
  std::array<double, 3> lambda_scales{0.6, 0.8, 1.0};  // quarter, half, full
  double lambda_e = 0.5;                            // content
  double lambda_tex = 50.0;                         // texture
  double lambda_t = 25.0;                           // total variation
  double lambda_adv = 1.0;                          // adversarial

  void validate() const {
    auto check = [](double v, const char* key) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string("loss weight ") + key + " must be >= 0");
    };
    check(alpha, "loss.alpha");
    for (double l : lambda_scales) check(l, "loss.lambda_scales");
    check(lambda_e, "loss.lambda_e");
    check(lambda_tex, "loss.lambda_tex");
    check(lambda_t, "loss.lambda_t");
    check(lambda_adv, "loss.lambda_adv");
  }
};

struct LossBreakdown {
  double multiscale = 0;
  double content = 0;
  double texture = 0;
  double tv = 0;
  double adversarial = 0;
  double total = 0;
};

// One output scale of the multiscale regression term.
template <typename T>
struct ScaleTerm {
  Var<T> out;
  Var<T> gt;
  Tensor<T> mask;  // (N,1,H,W), binary
  double lambda = 1.0;
};

// Σ_i λ_i ( mean|M_i ⊙ (out_i − gt_i)| + α · mean|(1 − M_i) ⊙ (out_i − gt_i)| ),
// both means over every element of the scale.
template <typename T>
Var<T> multiscale_regression_loss(std::span<const ScaleTerm<T>> scales, double alpha) {
  if (scales.empty()) throw std::invalid_argument("multiscale loss needs at least one scale");
  Var<T> total;
  for (const auto& s : scales) {
    require_same_shape(s.out.value(), s.gt.value(), "multiscale scale");
    const Shape& sh = s.out.shape();
    if (s.mask.shape() != Shape{sh[0], 1, sh[2], sh[3]}) {
      throw std::invalid_argument("multiscale loss: mask " + shape_string(s.mask.shape()) + " does not match output " +
                                  shape_string(sh));
    }
    Tensor<T> weight(s.mask.shape());
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = s.mask[i] + T(alpha) * (T(1) - s.mask[i]);
    Var<T> term = ops::scale(ops::weighted_abs_mean(s.out, s.gt, weight), static_cast<T>(s.lambda));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

// Network-ready view of a batch of samples: signed-range inputs, area-averaged
// ground-truth pyramid and block-max mask pyramid, ordered quarter/half/full.
template <typename T>
struct TargetBatch {
  Tensor<T> input;
  std::array<Tensor<T>, 3> gt;
  std::array<Tensor<T>, 3> mask;
  std::vector<std::string> ids;

  const Tensor<T>& gt_full() const { return gt[2]; }
  const Tensor<T>& mask_full() const { return mask[2]; }
};

template <typename T>
TargetBatch<T> make_target_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  TargetBatch<T> b;
  std::vector<ImageTensor> inputs;
  std::array<std::vector<ImageTensor>, 3> gts;
  std::array<std::vector<Mask>, 3> masks;
  for (const auto& s : samples) {
    validate(s);
    inputs.push_back(s.input);
    const ImageTensor gt = to_range(s.ground_truth, Range::Signed);
    const MaskPyramid pyr = build_mask_pyramid(s.mask);
    for (int level = 0; level < 3; ++level) {
      const int f = kOutputDownsample[level];
      gts[level].push_back(f == 1 ? gt : area_downsample(gt, f));
      masks[level].push_back(pyr.levels[level].mask);
    }
    b.ids.push_back(s.id);
  }
  b.input = to_batch<T>(std::span<const ImageTensor>(inputs));
  for (int level = 0; level < 3; ++level) {
    b.gt[level] = to_batch<T>(std::span<const ImageTensor>(gts[level]));
    b.mask[level] = to_batch<T>(std::span<const Mask>(masks[level]));
  }
  return b;
}

template <typename T>
Var<T> multiscale_regression_loss(const TargetBatch<T>& batch, const MultiScaleOutput<T>& outs, const LossWeights& w) {
  const std::array<Var<T>, 3> pred{outs.quarter, outs.half, outs.full};
  std::vector<ScaleTerm<T>> scales;
  for (int level = 0; level < 3; ++level) {
    scales.push_back({pred[level], Var<T>(batch.gt[level]), batch.mask[level], w.lambda_scales[level]});
  }
  return multiscale_regression_loss<T>(std::span<const ScaleTerm<T>>(scales), w.alpha);
}

// Content and texture terms split by branch, sharing one feature pass.
template <typename T>
struct PerceptualTerms {
  Var<T> content_out;
  Var<T> content_comp;
  Var<T> texture_out;
  Var<T> texture_comp;

  Var<T> content() const { return ops::add(content_out, content_comp); }
  Var<T> texture() const { return ops::add(texture_out, texture_comp); }
};

namespace detail {

template <typename T>
Var<T> sum_vars(const std::vector<Var<T>>& terms) {
  Var<T> total = terms.at(0);
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return total;
}

// (1/(N·C·H·W)) Σ |gram(a) − gram(b)|; N averages over the batch.
template <typename T>
Var<T> gram_distance(const Var<T>& a, const Var<T>& b) {
  const Shape& s = a.shape();
  const T norm = T(1) / static_cast<T>(static_cast<double>(s[0]) * s[1] * s[2] * s[3]);
  return ops::abs_diff_sum(ops::gram(a), ops::gram(b), norm);
}

}  // namespace detail

template <typename T>
PerceptualTerms<T> perceptual_terms(const Var<T>& out, const Var<T>& comp, const Var<T>& gt,
                                    const FeatureExtractor<T>& fx) {
  require_same_shape(out.value(), gt.value(), "perceptual loss");
  require_same_shape(comp.value(), gt.value(), "perceptual loss");
  const auto f_out = fx.extract(out);
  const auto f_comp = fx.extract(comp);
  std::vector<Var<T>> f_gt;
  {
    NoGradGuard guard;
    f_gt = fx.extract(gt.detach());
  }
  if (f_out.empty()) throw std::logic_error("feature extractor produced no taps");
  std::vector<Var<T>> c_out, c_comp, t_out, t_comp;
  for (std::size_t n = 0; n < f_gt.size(); ++n) {
    c_out.push_back(ops::abs_diff_mean(f_out[n], f_gt[n]));
    c_comp.push_back(ops::abs_diff_mean(f_comp[n], f_gt[n]));
    t_out.push_back(detail::gram_distance(f_out[n], f_gt[n]));
    t_comp.push_back(detail::gram_distance(f_comp[n], f_gt[n]));
  }
  return {detail::sum_vars(c_out), detail::sum_vars(c_comp), detail::sum_vars(t_out), detail::sum_vars(t_comp)};
}

// Σ_taps mean|A(out) − A(gt)| + mean|A(comp) − A(gt)|.
template <typename T>
Var<T> content_loss(const Var<T>& out, const Var<T>& comp, const Var<T>& gt, const FeatureExtractor<T>& fx) {
  return perceptual_terms(out, comp, gt, fx).content();
}

// Σ_taps (1/CHW)‖gram(A(out)) − gram(A(gt))‖₁ plus the comp counterpart.
template <typename T>
Var<T> texture_loss(const Var<T>& out, const Var<T>& comp, const Var<T>& gt, const FeatureExtractor<T>& fx) {
  return perceptual_terms(out, comp, gt, fx).texture();
}

// Neighbour-difference total variation, normalised by the number of
// neighbour pairs (over channels and batch).
template <typename T>
Var<T> tv_loss(const Var<T>& out) {
  const Shape& s = out.shape();
  if (s.size() != 4) throw std::invalid_argument("tv_loss expects NCHW");
  const double planes = static_cast<double>(s[0]) * s[1];
  const double pairs = planes * (static_cast<double>(s[2] - 1) * s[3] + static_cast<double>(s[2]) * (s[3] - 1));
  return ops::total_variation_sum(out, pairs > 0 ? static_cast<T>(1.0 / pairs) : T(0));
}

template <typename T>
struct RefinedLoss {
  Var<T> multiscale;
  PerceptualTerms<T> perceptual;
  Var<T> tv;
  Var<T> adversarial;  // may be undefined
  Var<T> total;

  LossBreakdown breakdown() const {
    LossBreakdown b;
    b.multiscale = multiscale.value().item();
    b.content = perceptual.content().value().item();
    b.texture = perceptual.texture().value().item();
    b.tv = tv.value().item();
    b.adversarial = adversarial.defined() ? adversarial.value().item() : 0.0;
    b.total = total.value().item();
    return b;
  }
};

// L_M + λe·L_C + λtex·L_T + λt·L_tv + λadv·adversarial, with the composed
// image built from the full-scale output.
template <typename T>
RefinedLoss<T> refined_loss(const TargetBatch<T>& batch, const MultiScaleOutput<T>& outs, const Var<T>& adversarial,
                            const LossWeights& w, const FeatureExtractor<T>& fx) {
  w.validate();
  RefinedLoss<T> r;
  const Var<T> gt(batch.gt_full());
  const Var<T> comp = ops::masked_blend(outs.full, gt, batch.mask_full());
  r.multiscale = multiscale_regression_loss(batch, outs, w);
  r.perceptual = perceptual_terms(outs.full, comp, gt, fx);
  r.tv = tv_loss(outs.full);
  r.adversarial = adversarial;
  Var<T> total = r.multiscale;
  total = ops::add(total, ops::scale(r.perceptual.content(), static_cast<T>(w.lambda_e)));
  total = ops::add(total, ops::scale(r.perceptual.texture(), static_cast<T>(w.lambda_tex)));
  total = ops::add(total, ops::scale(r.tv, static_cast<T>(w.lambda_t)));
  if (adversarial.defined()) total = ops::add(total, ops::scale(adversarial, static_cast<T>(w.lambda_adv)));
  r.total = total;
  return r;
}

}  // namespace eraser
