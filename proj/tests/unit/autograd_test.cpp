#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "eraser/ops.hpp"
#include "gradcheck.hpp"

using namespace eraser;
using eraser::testing::check_gradient;
using eraser::testing::uniform_tensor;

namespace {

// Direct-summation convolution used as the forward oracle.
Tensor<double> brute_conv(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> out(Shape{n, co, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double s = 0;
          for (int ch = 0; ch < c; ++ch)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int iy = y * stride - pad + a, ix = xx * stride - pad + b;
                if (iy >= 0 && iy < h && ix >= 0 && ix < wd) s += x.at(i, ch, iy, ix) * w.at(o, ch, a, b);
              }
          out.at(i, o, y, xx) = s;
        }
  return out;
}

// Scatter definition of the transposed convolution.
Tensor<double> brute_deconv(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(1), k = w.dim(2);
  const int oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
  Tensor<double> out(Shape{n, co, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ci; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx)
          for (int o = 0; o < co; ++o)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int oy = y * stride - pad + a, ox = xx * stride - pad + b;
                if (oy >= 0 && oy < oh && ox >= 0 && ox < ow) out.at(i, o, oy, ox) += x.at(i, c, y, xx) * w.at(c, o, a, b);
              }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Conv2d, MatchesDirectSummation) {
  std::mt19937_64 rng(3);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 3, 7}, {2, 0, 4}, {1, 0, 1}, {2, 0, 1}}) {
    const auto x = uniform_tensor({2, 3, 9, 9}, rng);
    const auto w = uniform_tensor({4, 3, k, k}, rng);
    const auto got = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(), stride, pad).value();
    const auto want = brute_conv(x, w, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << "stride " << stride << " pad " << pad << " k " << k;
  }
}

TEST(ConvTranspose2d, MatchesScatterDefinitionAndDoublesSize) {
  std::mt19937_64 rng(4);
  const auto x = uniform_tensor({2, 3, 5, 5}, rng);
  const auto w = uniform_tensor({3, 2, 4, 4}, rng);
  const auto got = ops::conv_transpose2d(Var<double>(x), Var<double>(w), Var<double>(), 2, 1).value();
  EXPECT_EQ(got.shape(), (Shape{2, 2, 10, 10}));
  EXPECT_LT(max_abs_diff(got, brute_deconv(x, w, 2, 1)), 1e-12);
}

TEST(Gradients, ConvolutionsAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto r = uniform_tensor({2, 4, 4, 4}, rng);
  const auto x0 = uniform_tensor({2, 3, 8, 8}, rng);
  const auto w0 = uniform_tensor({4, 3, 3, 3}, rng);
  const auto b0 = uniform_tensor({4}, rng);

  auto wrt_x = check_gradient(
      [&](const Var<double>& x) {
        return ops::dot(ops::conv2d(x, Var<double>(w0), Var<double>(b0), 2, 1), r);
      },
      x0);
  EXPECT_LT(wrt_x.max_relative_error, 1e-6);
  auto wrt_w = check_gradient(
      [&](const Var<double>& w) { return ops::dot(ops::conv2d(Var<double>(x0), w, Var<double>(b0), 2, 1), r); }, w0);
  EXPECT_LT(wrt_w.max_relative_error, 1e-6);
  auto wrt_b = check_gradient(
      [&](const Var<double>& b) { return ops::dot(ops::conv2d(Var<double>(x0), Var<double>(w0), b, 2, 1), r); }, b0);
  EXPECT_LT(wrt_b.max_relative_error, 1e-6);

  const auto rd = uniform_tensor({2, 2, 16, 16}, rng);
  const auto wd0 = uniform_tensor({3, 2, 4, 4}, rng);
  auto d_x = check_gradient(
      [&](const Var<double>& x) {
        return ops::dot(ops::conv_transpose2d(x, Var<double>(wd0), Var<double>(), 2, 1), rd);
      },
      x0);
  EXPECT_LT(d_x.max_relative_error, 1e-6);
  auto d_w = check_gradient(
      [&](const Var<double>& w) {
        return ops::dot(ops::conv_transpose2d(Var<double>(x0), w, Var<double>(), 2, 1), rd);
      },
      wd0);
  EXPECT_LT(d_w.max_relative_error, 1e-6);
}

TEST(Gradients, ActivationsAndLayoutOps) {
  std::mt19937_64 rng(6);
  const auto x0 = uniform_tensor({1, 2, 6, 6}, rng, -2, 2);
  const auto r = uniform_tensor({1, 2, 6, 6}, rng);
  const std::vector<std::function<Var<double>(const Var<double>&)>> unaries{
      [](const Var<double>& v) { return ops::elu(v, 1.0); },
      [](const Var<double>& v) { return ops::tanh(v); },
      [](const Var<double>& v) { return ops::sigmoid(v); },
      [](const Var<double>& v) { return ops::channel_affine(v, {2.0, -0.5}, {0.1, 0.3}); },
  };
  for (const auto& f : unaries) {
    auto res = check_gradient([&](const Var<double>& v) { return ops::dot(f(v), r); }, x0);
    EXPECT_LT(res.max_relative_error, 1e-6);
  }

  const auto rp = uniform_tensor({1, 2, 10, 10}, rng);
  auto pad = check_gradient([&](const Var<double>& v) { return ops::dot(ops::zero_pad2d(v, 2), rp); }, x0);
  EXPECT_LT(pad.max_relative_error, 1e-9);

  const auto rpool = uniform_tensor({1, 2, 3, 3}, rng);
  auto avg = check_gradient([&](const Var<double>& v) { return ops::dot(ops::avg_pool2d(v, 2), rpool); }, x0);
  EXPECT_LT(avg.max_relative_error, 1e-9);
  auto mx = check_gradient([&](const Var<double>& v) { return ops::dot(ops::max_pool2d(v, 3, 2, 1), rpool); }, x0);
  EXPECT_LT(mx.max_relative_error, 1e-6);

  const auto other = uniform_tensor({1, 1, 6, 6}, rng);
  const auto rc = uniform_tensor({1, 3, 6, 6}, rng);
  auto cat = check_gradient(
      [&](const Var<double>& v) { return ops::dot(ops::concat_channels(v, Var<double>(other)), rc); }, x0);
  EXPECT_LT(cat.max_relative_error, 1e-9);
}

TEST(Gradients, GramMatrix) {
  std::mt19937_64 rng(7);
  const auto x0 = uniform_tensor({2, 3, 4, 5}, rng);
  const auto r = uniform_tensor({2, 3, 3}, rng);
  auto res = check_gradient([&](const Var<double>& v) { return ops::dot(ops::gram(v), r); }, x0);
  EXPECT_LT(res.max_relative_error, 1e-6);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var<double> x(Tensor<double>(Shape{1}, 3.0), true);
  Var<double> y = ops::add(x, x);
  Var<double> z = ops::add(y, ops::scale(x, 2.0));
  backward(z);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Var<double> x(Tensor<double>(Shape{1}, 1.0), true);
  NoGradGuard guard;
  Var<double> y = ops::scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(backward(y), std::logic_error);
}

TEST(Autograd, ShapeMismatchIsReported) {
  Var<double> a(Tensor<double>(Shape{2, 2}));
  Var<double> b(Tensor<double>(Shape{4}));
  EXPECT_THROW(ops::add(a, b), std::invalid_argument);
  Var<double> x(Tensor<double>(Shape{1, 3, 4, 4}));
  Var<double> w(Tensor<double>(Shape{2, 2, 3, 3}));
  EXPECT_THROW(ops::conv2d(x, w, Var<double>(), 1, 1), std::invalid_argument);
}

template <typename T>
double gemm_error(bool ta, bool tb, int m, int n, int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n), c(static_cast<std::size_t>(m) * n, T(2));
  for (auto& v : a) v = static_cast<T>(u(rng));
  for (auto& v : b) v = static_cast<T>(u(rng));
  const int lda = ta ? m : k, ldb = tb ? k : n;
  blas::gemm(ta, tb, m, n, k, T(1), a.data(), lda, b.data(), ldb, T(0.5), c.data(), n);
  double worst = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 1.0;  // 0.5 · initial 2
      for (int t = 0; t < k; ++t) {
        const double av = ta ? a[t * m + i] : a[i * k + t];
        const double bv = tb ? b[j * k + t] : b[t * n + j];
        s += av * bv;
      }
      worst = std::max(worst, std::abs(s - c[i * n + j]));
    }
  return worst;
}

TEST(Gemm, MatchesTripleLoopForAllTransposes) {
  std::mt19937_64 rng(31);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb)
      for (auto [m, n, k] : std::vector<std::array<int, 3>>{{5, 288, 4}, {64, 300, 64}, {1, 1000, 9}, {300, 16, 300}}) {
        EXPECT_LT(gemm_error<double>(ta, tb, m, n, k, rng), 1e-10 * k) << ta << tb << " " << m << "x" << n << "x" << k;
        EXPECT_LT(gemm_error<float>(ta, tb, m, n, k, rng), 1e-4 * k) << ta << tb << " " << m << "x" << n << "x" << k;
      }
}

TEST(Conv2d, WideWeightGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(32);
  const Tensor<double> x = uniform_tensor({1, 64, 2, 2}, rng);
  const Tensor<double> w = uniform_tensor({5, 64, 3, 3}, rng, -0.03, 0.03);
  auto f = [&](const Var<double>& wv) { return ops::sum(ops::tanh(ops::conv2d(Var<double>(x), wv, Var<double>(), 1, 1))); };
  EXPECT_LT(check_gradient(f, w, 1e-5, 400).max_relative_error, 1e-5);
}
