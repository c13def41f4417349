#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace eraser::blas {

namespace detail {

template <typename T>
void reference_gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
                    int ldb, T beta, T* c, int ldc) {
  std::vector<T> row(static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), T(0));
    for (int t = 0; t < k; ++t) {
      const T av = trans_a ? a[static_cast<std::size_t>(t) * lda + i] : a[static_cast<std::size_t>(i) * lda + t];
      if (av == T(0)) continue;
      if (trans_b) {
        for (int j = 0; j < n; ++j) row[j] += av * b[static_cast<std::size_t>(j) * ldb + t];
      } else {
        const T* br = b + static_cast<std::size_t>(t) * ldb;
        for (int j = 0; j < n; ++j) row[j] += av * br[j];
      }
    }
    T* cr = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < n; ++j) cr[j] = alpha * row[j] + (beta == T(0) ? T(0) : beta * cr[j]);
  }
}

// Some OpenBLAS builds pick a double-precision kernel that returns wrong
// products on newer AVX-512 parts. Probe once with shapes that trip it.
inline bool dgemm_is_trustworthy() {
  static const bool ok = [] {
    const int shapes[][3] = {{5, 200, 4}, {16, 1000, 64}, {300, 300, 16}, {1, 7, 3}};
    for (const auto& s : shapes) {
      const int m = s[0], n = s[1], k = s[2];
      for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
          std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n);
          for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::sin(0.37 * static_cast<double>(i) + 1.0);
          for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::cos(0.91 * static_cast<double>(i) + 2.0);
          std::vector<double> got(static_cast<std::size_t>(m) * n), want(got.size());
          const int lda = ta ? m : k, ldb = tb ? k : n;
          cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0,
                      a.data(), lda, b.data(), ldb, 0.0, got.data(), n);
          reference_gemm<double>(ta, tb, m, n, k, 1.0, a.data(), lda, b.data(), ldb, 0.0, want.data(), n);
          for (std::size_t i = 0; i < got.size(); ++i) {
            if (std::abs(got[i] - want[i]) > 1e-9 * (1.0 + std::abs(want[i]))) return false;
          }
        }
    }
    return true;
  }();
  return ok;
}

}  // namespace detail

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  if (!detail::dgemm_is_trustworthy()) {
    detail::reference_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace eraser::blas
