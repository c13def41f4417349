#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "eraser/autograd.hpp"
#include "eraser/blas.hpp"
#include "eraser/tensor.hpp"

namespace eraser::ops {

namespace detail {

inline int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

// cols has shape (channels*k*k, out_h*out_w).
template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* cols) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* dst = row + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * width;
          if (stride == 1) {
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow - pad + kj;
              dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
            }
          } else {
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow * stride - pad + kj;
              dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-adds cols back onto x (the adjoint of im2col).
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* x) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * out_w;
          T* dst = xc + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T, typename F>
void accumulate_if(Node<T>& input, F&& add) {
  if (input.requires_grad) add(input.grad_buffer());
}

template <typename T>
T clamp_prob(T p, T eps) {
  return std::clamp(p, eps, T(1) - eps);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      detail::accumulate_if(*in, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    detail::accumulate_if(*self.inputs[1], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& self) {
    const T g0 = self.grad[0];
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (auto& v : g.values()) v += g0;
    });
  });
}

// Σ a ⊙ weights for a constant weight tensor.
template <typename T>
Var<T> dot(const Var<T>& a, const Tensor<T>& weights) {
  require_same_shape(a.value(), weights, "dot");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  return make_result<T>(Tensor<T>::scalar(s), {a}, [weights](Node<T>& self) {
    const T g0 = self.grad[0];
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * weights[i];
    });
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Activations

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F forward, D derivative) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward(xv[i]);
  return make_result<T>(std::move(out), {x}, [derivative](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    detail::accumulate_if(in, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(in.value[i], self.value[i]);
    });
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> elu(const Var<T>& x, T alpha) {
  return unary(
      x, [alpha](T v) { return v > T(0) ? v : alpha * std::expm1(v); },
      [alpha](T v, T y) { return v > T(0) ? T(1) : y + alpha; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Convolutions. Weights use the (out, in, k, k) layout for conv2d and the
// (in, out, k, k) layout for conv_transpose2d; bias may be an undefined Var.

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  require_4d(xv, "conv2d input");
  require_4d(wv, "conv2d weight");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != c) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                                std::to_string(wv.dim(1)));
  }
  const int oh = detail::conv_out_size(h, k, stride, pad), ow = detail::conv_out_size(w, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: input " + shape_string(xv.shape()) + " too small");
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  const int ckk = c * k * k;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t in_sz = static_cast<std::size_t>(c) * h * w;
  const std::size_t out_sz = static_cast<std::size_t>(co) * plane;

  Tensor<T> out(Shape{n, co, oh, ow});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
  for (int i = 0; i < n; ++i) {
    const T* src = xv.data() + i * in_sz;
    if (!pointwise) {
      detail::im2col(src, c, h, w, k, stride, pad, oh, ow, cols.data());
      src = cols.data();
    }
    blas::gemm(false, false, co, static_cast<int>(plane), ckk, T(1), wv.data(), ckk, src, static_cast<int>(plane),
               T(0), out.data() + i * out_sz, static_cast<int>(plane));
  }
  if (bias.defined()) {
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < co; ++o) {
        T* dst = out.data() + i * out_sz + o * plane;
        const T b = bias.value()[o];
        for (std::size_t p = 0; p < plane; ++p) dst[p] += b;
      }
  }

  auto bw = [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    const T* dy_all = self.grad.data();
    std::vector<T> work(pointwise ? 0 : static_cast<std::size_t>(ckk) * plane);
    for (int i = 0; i < n; ++i) {
      const T* dy = dy_all + i * out_sz;
      if (wn.requires_grad) {
        const T* src = xn.value.data() + i * in_sz;
        if (!pointwise) {
          detail::im2col(src, c, h, w, k, stride, pad, oh, ow, work.data());
          src = work.data();
        }
        blas::gemm(false, true, co, ckk, static_cast<int>(plane), T(1), dy, static_cast<int>(plane), src,
                   static_cast<int>(plane), T(1), wn.grad_buffer().data(), ckk);
      }
      if (xn.requires_grad) {
        T* dx = xn.grad_buffer().data() + i * in_sz;
        if (pointwise) {
          blas::gemm(true, false, ckk, static_cast<int>(plane), co, T(1), wn.value.data(), ckk, dy,
                     static_cast<int>(plane), T(1), dx, static_cast<int>(plane));
        } else {
          blas::gemm(true, false, ckk, static_cast<int>(plane), co, T(1), wn.value.data(), ckk, dy,
                     static_cast<int>(plane), T(0), work.data(), static_cast<int>(plane));
          detail::col2im(work.data(), c, h, w, k, stride, pad, oh, ow, dx);
        }
      }
    }
    if (self.inputs.size() > 2) {
      detail::accumulate_if(*self.inputs[2], [&](Tensor<T>& g) {
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < co; ++o) {
            const T* dy = dy_all + i * out_sz + o * plane;
            T s = 0;
            for (std::size_t p = 0; p < plane; ++p) s += dy[p];
            g[o] += s;
          }
      });
    }
  };
  if (bias.defined()) return make_result<T>(std::move(out), {x, weight, bias}, bw);
  return make_result<T>(std::move(out), {x, weight}, bw);
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  require_4d(xv, "conv_transpose2d input");
  require_4d(wv, "conv_transpose2d weight");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int co = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != ci) {
    throw std::invalid_argument("conv_transpose2d: input has " + std::to_string(ci) + " channels, weight expects " +
                                std::to_string(wv.dim(0)));
  }
  const int oh = (h - 1) * stride - 2 * pad + k, ow = (w - 1) * stride - 2 * pad + k;
  const int cokk = co * k * k;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t in_sz = ci * in_plane;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t out_sz = co * out_plane;

  Tensor<T> out(Shape{n, co, oh, ow});
  std::vector<T> cols(static_cast<std::size_t>(cokk) * in_plane);
  for (int i = 0; i < n; ++i) {
    blas::gemm(true, false, cokk, static_cast<int>(in_plane), ci, T(1), wv.data(), cokk, xv.data() + i * in_sz,
               static_cast<int>(in_plane), T(0), cols.data(), static_cast<int>(in_plane));
    detail::col2im(cols.data(), co, oh, ow, k, stride, pad, h, w, out.data() + i * out_sz);
  }
  if (bias.defined()) {
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < co; ++o) {
        T* dst = out.data() + i * out_sz + o * out_plane;
        const T b = bias.value()[o];
        for (std::size_t p = 0; p < out_plane; ++p) dst[p] += b;
      }
  }

  auto bw = [=](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    std::vector<T> work(static_cast<std::size_t>(cokk) * in_plane);
    for (int i = 0; i < n; ++i) {
      const T* dy = self.grad.data() + i * out_sz;
      detail::im2col(dy, co, oh, ow, k, stride, pad, h, w, work.data());
      if (xn.requires_grad) {
        blas::gemm(false, false, ci, static_cast<int>(in_plane), cokk, T(1), wn.value.data(), cokk, work.data(),
                   static_cast<int>(in_plane), T(1), xn.grad_buffer().data() + i * in_sz,
                   static_cast<int>(in_plane));
      }
      if (wn.requires_grad) {
        blas::gemm(false, true, ci, cokk, static_cast<int>(in_plane), T(1), xn.value.data() + i * in_sz,
                   static_cast<int>(in_plane), work.data(), static_cast<int>(in_plane), T(1),
                   wn.grad_buffer().data(), cokk);
      }
    }
    if (self.inputs.size() > 2) {
      detail::accumulate_if(*self.inputs[2], [&](Tensor<T>& g) {
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < co; ++o) {
            const T* dy = self.grad.data() + i * out_sz + o * out_plane;
            T s = 0;
            for (std::size_t p = 0; p < out_plane; ++p) s += dy[p];
            g[o] += s;
          }
      });
    }
  };
  if (bias.defined()) return make_result<T>(std::move(out), {x, weight, bias}, bw);
  return make_result<T>(std::move(out), {x, weight}, bw);
}

// ---------------------------------------------------------------------------
// Spatial resampling and layout

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int k, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "max_pool2d");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = detail::conv_out_size(h, k, stride, pad), ow = detail::conv_out_size(w, k, stride, pad);
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (int i = 0; i < n * c; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * h * w;
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = base;
        for (int ki = 0; ki < k; ++ki) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int ix = xo * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
            if (xv[idx] > best) {
              best = xv[idx];
              where = idx;
            }
          }
        }
        out[o] = best;
        argmax[o] = where;
      }
  }
  return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
    });
  });
}

// Non-overlapping k×k mean; spatial dims must be divisible by k.
template <typename T>
Var<T> avg_pool2d(const Var<T>& x, int k) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "avg_pool2d");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % k != 0 || w % k != 0) {
    throw std::invalid_argument("avg_pool2d: " + shape_string(xv.shape()) + " not divisible by " + std::to_string(k));
  }
  const int oh = h / k, ow = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const T* src = xv.data() + static_cast<std::size_t>(i) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(i) * oh * ow;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) dst[(y / k) * ow + xx / k] += src[y * w + xx];
    for (int p = 0; p < oh * ow; ++p) dst[p] *= inv;
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (int i = 0; i < n * c; ++i) {
        T* dst = g.data() + static_cast<std::size_t>(i) * h * w;
        const T* src = self.grad.data() + static_cast<std::size_t>(i) * oh * ow;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) dst[y * w + xx] += src[(y / k) * ow + xx / k] * inv;
      }
    });
  });
}

template <typename T>
Var<T> zero_pad2d(const Var<T>& x, int pad) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "zero_pad2d");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  Tensor<T> out(Shape{n, c, ph, pw});
  for (int i = 0; i < n * c; ++i)
    for (int y = 0; y < h; ++y) {
      const T* src = xv.data() + (static_cast<std::size_t>(i) * h + y) * w;
      std::copy(src, src + w, out.data() + (static_cast<std::size_t>(i) * ph + y + pad) * pw + pad);
    }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (int i = 0; i < n * c; ++i)
        for (int y = 0; y < h; ++y) {
          const T* src = self.grad.data() + (static_cast<std::size_t>(i) * ph + y + pad) * pw + pad;
          T* dst = g.data() + (static_cast<std::size_t>(i) * h + y) * w;
          for (int xx = 0; xx < w; ++xx) dst[xx] += src[xx];
        }
    });
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_4d(av, "concat_channels");
  require_4d(bv, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw std::invalid_argument("concat_channels: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor<T> out(Shape{n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(bv.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (int i = 0; i < n; ++i) {
        const T* src = self.grad.data() + i * (ca + cb) * plane;
        T* dst = g.data() + i * ca * plane;
        for (std::size_t p = 0; p < ca * plane; ++p) dst[p] += src[p];
      }
    });
    detail::accumulate_if(*self.inputs[1], [&](Tensor<T>& g) {
      for (int i = 0; i < n; ++i) {
        const T* src = self.grad.data() + (i * (ca + cb) + ca) * plane;
        T* dst = g.data() + i * cb * plane;
        for (std::size_t p = 0; p < cb * plane; ++p) dst[p] += src[p];
      }
    });
  });
}

// Per-channel affine map y = x * scale[c] + shift[c].
template <typename T>
Var<T> channel_affine(const Var<T>& x, const std::vector<T>& scale_c, const std::vector<T>& shift_c) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "channel_affine");
  const int n = xv.dim(0), c = xv.dim(1);
  if (static_cast<int>(scale_c.size()) != c || static_cast<int>(shift_c.size()) != c) {
    throw std::invalid_argument("channel_affine: coefficient count does not match channels");
  }
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = xv[off + p] * scale_c[ch] + shift_c[ch];
    }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) g[off + p] += self.grad[off + p] * scale_c[ch];
        }
    });
  });
}

// mask ⊙ a + (1 − mask) ⊙ b with a constant (N,1,H,W) mask broadcast over channels.
template <typename T>
Var<T> masked_blend(const Var<T>& a, const Var<T>& b, const Tensor<T>& mask) {
  require_same_shape(a.value(), b.value(), "masked_blend");
  const Tensor<T>& av = a.value();
  require_4d(av, "masked_blend");
  const int n = av.dim(0), c = av.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  if (mask.shape() != Shape{n, 1, av.dim(2), av.dim(3)}) {
    throw std::invalid_argument("masked_blend: mask shape " + shape_string(mask.shape()) + " vs image " +
                                shape_string(av.shape()));
  }
  Tensor<T> out(av.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * plane + p;
        const T m = mask[i * plane + p];
        out[idx] = m * av[idx] + (T(1) - m) * b.value()[idx];
      }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    for (int which = 0; which < 2; ++which) {
      detail::accumulate_if(*self.inputs[which], [&](Tensor<T>& g) {
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * plane + p;
              const T m = mask[i * plane + p];
              g[idx] += self.grad[idx] * (which == 0 ? m : T(1) - m);
            }
      });
    }
  });
}

// ---------------------------------------------------------------------------
// Loss primitives. The derivative of |x| at exactly 0 is taken as 0.

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// mean over all elements of weight ⊙ |a − b|, weight shaped (N,1,H,W) and
// broadcast over channels.
template <typename T>
Var<T> weighted_abs_mean(const Var<T>& a, const Var<T>& b, const Tensor<T>& weight) {
  require_same_shape(a.value(), b.value(), "weighted_abs_mean");
  const Tensor<T>& av = a.value();
  require_4d(av, "weighted_abs_mean");
  const int n = av.dim(0), c = av.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  if (weight.shape() != Shape{n, 1, av.dim(2), av.dim(3)}) {
    throw std::invalid_argument("weighted_abs_mean: weight shape " + shape_string(weight.shape()) + " vs " +
                                shape_string(av.shape()));
  }
  const T inv = T(1) / static_cast<T>(av.size());
  T total = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * plane + p;
        total += weight[i * plane + p] * std::abs(av[idx] - b.value()[idx]);
      }
  return make_result<T>(Tensor<T>::scalar(total * inv), {a, b}, [=](Node<T>& self) {
    const T g0 = self.grad[0] * inv;
    const Tensor<T>& av2 = self.inputs[0]->value;
    const Tensor<T>& bv2 = self.inputs[1]->value;
    for (int which = 0; which < 2; ++which) {
      const T dir = which == 0 ? T(1) : T(-1);
      detail::accumulate_if(*self.inputs[which], [&](Tensor<T>& g) {
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * plane + p;
              g[idx] += dir * g0 * weight[i * plane + p] * sign_of(av2[idx] - bv2[idx]);
            }
      });
    }
  });
}

// Σ|a − b| · factor.
template <typename T>
Var<T> abs_diff_sum(const Var<T>& a, const Var<T>& b, T factor = T(1)) {
  require_same_shape(a.value(), b.value(), "abs_diff_sum");
  T total = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) total += std::abs(a.value()[i] - b.value()[i]);
  return make_result<T>(Tensor<T>::scalar(total * factor), {a, b}, [factor](Node<T>& self) {
    const T g0 = self.grad[0] * factor;
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    detail::accumulate_if(*self.inputs[0], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * sign_of(av[i] - bv[i]);
    });
    detail::accumulate_if(*self.inputs[1], [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * sign_of(av[i] - bv[i]);
    });
  });
}

template <typename T>
Var<T> abs_diff_mean(const Var<T>& a, const Var<T>& b) {
  return abs_diff_sum(a, b, T(1) / static_cast<T>(a.value().size()));
}

// Per-sample channel Gram matrix: (N,C,H,W) -> (N,C,C), G = F Fᵀ with F the
// (C, H·W) flattening.
template <typename T>
Var<T> gram(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "gram");
  const int n = xv.dim(0), c = xv.dim(1);
  const int plane = xv.dim(2) * xv.dim(3);
  Tensor<T> out(Shape{n, c, c});
  for (int i = 0; i < n; ++i) {
    const T* f = xv.data() + static_cast<std::size_t>(i) * c * plane;
    blas::gemm(false, true, c, c, plane, T(1), f, plane, f, plane, T(0), out.data() + static_cast<std::size_t>(i) * c * c,
               c);
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    detail::accumulate_if(in, [&](Tensor<T>& g) {
      std::vector<T> sym(static_cast<std::size_t>(c) * c);
      for (int i = 0; i < n; ++i) {
        const T* dg = self.grad.data() + static_cast<std::size_t>(i) * c * c;
        for (int r = 0; r < c; ++r)
          for (int s = 0; s < c; ++s) sym[r * c + s] = dg[r * c + s] + dg[s * c + r];
        const T* f = in.value.data() + static_cast<std::size_t>(i) * c * plane;
        blas::gemm(false, false, c, plane, c, T(1), sym.data(), c, f, plane, T(1),
                   g.data() + static_cast<std::size_t>(i) * c * plane, plane);
      }
    });
  });
}

// Σ over vertical and horizontal neighbour pairs of |x[i,j] − x[i+1,j]| and
// |x[i,j] − x[i,j+1]|, all channels and samples, times factor.
template <typename T>
Var<T> total_variation_sum(const Var<T>& x, T factor = T(1)) {
  const Tensor<T>& xv = x.value();
  require_4d(xv, "total_variation");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  T total = 0;
  for (int p = 0; p < planes; ++p) {
    const T* s = xv.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        if (y + 1 < h) total += std::abs(s[y * w + xx] - s[(y + 1) * w + xx]);
        if (xx + 1 < w) total += std::abs(s[y * w + xx] - s[y * w + xx + 1]);
      }
  }
  return make_result<T>(Tensor<T>::scalar(total * factor), {x}, [=](Node<T>& self) {
    const T g0 = self.grad[0] * factor;
    Node<T>& in = *self.inputs[0];
    detail::accumulate_if(in, [&](Tensor<T>& g) {
      for (int p = 0; p < planes; ++p) {
        const T* s = in.value.data() + static_cast<std::size_t>(p) * h * w;
        T* d = g.data() + static_cast<std::size_t>(p) * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            if (y + 1 < h) {
              const T sg = g0 * sign_of(s[y * w + xx] - s[(y + 1) * w + xx]);
              d[y * w + xx] += sg;
              d[(y + 1) * w + xx] -= sg;
            }
            if (xx + 1 < w) {
              const T sg = g0 * sign_of(s[y * w + xx] - s[y * w + xx + 1]);
              d[y * w + xx] += sg;
              d[y * w + xx + 1] -= sg;
            }
          }
      }
    });
  });
}

// −Σ weight ⊙ log(p) with p clamped to [eps, 1 − eps]; clamped entries pass
// no gradient. With `complement` the term is −Σ weight ⊙ log(1 − p).
template <typename T>
Var<T> weighted_neg_log(const Var<T>& p, const Tensor<T>& weight, bool complement, T eps = T(1e-7)) {
  require_same_shape(p.value(), weight, "weighted_neg_log");
  T total = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (weight[i] == T(0)) continue;
    const T q = complement ? T(1) - p.value()[i] : p.value()[i];
    total -= weight[i] * std::log(detail::clamp_prob(q, eps));
  }
  return make_result<T>(Tensor<T>::scalar(total), {p}, [=](Node<T>& self) {
    const T g0 = self.grad[0];
    Node<T>& in = *self.inputs[0];
    detail::accumulate_if(in, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (weight[i] == T(0)) continue;
        const T q = complement ? T(1) - in.value[i] : in.value[i];
        if (q < eps || q > T(1) - eps) continue;
        const T d = -weight[i] / q;
        g[i] += g0 * (complement ? -d : d);
      }
    });
  });
}

}  // namespace eraser::ops
