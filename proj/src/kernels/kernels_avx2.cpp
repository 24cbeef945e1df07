#include "nmpose/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace nmpose::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d hi64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
}

float dot_f(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double dot_d(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f(float a, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_d(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

// Vector traits so one register-tiled GEMM body serves float and double.
struct F32 {
  using T = float;
  using V = __m256;
  static constexpr int kLanes = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V bcast(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr int kLanes = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V bcast(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
};

template <typename S, bool TransA>
void gemm_tiled(int m, int n, int k, const typename S::T* a, int lda,
                const typename S::T* b, int ldb, typename S::T* c, int ldc) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr int L = S::kLanes;
  constexpr int kCols = 2 * L;
  auto A = [&](int i, int kk) -> T {
    return TransA ? a[static_cast<std::size_t>(kk) * lda + i]
                  : a[static_cast<std::size_t>(i) * lda + kk];
  };
  auto C = [&](int i, int j) -> T* { return c + static_cast<std::size_t>(i) * ldc + j; };
  auto B = [&](int kk, int j) -> const T* { return b + static_cast<std::size_t>(kk) * ldb + j; };

  int j = 0;
  // Column panels outermost so the k x kCols panel of B stays hot across rows.
  for (; j + kCols <= n; j += kCols) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      V c00 = S::load(C(i, j)), c01 = S::load(C(i, j + L));
      V c10 = S::load(C(i + 1, j)), c11 = S::load(C(i + 1, j + L));
      V c20 = S::load(C(i + 2, j)), c21 = S::load(C(i + 2, j + L));
      V c30 = S::load(C(i + 3, j)), c31 = S::load(C(i + 3, j + L));
      for (int kk = 0; kk < k; ++kk) {
        const V b0 = S::load(B(kk, j));
        const V b1 = S::load(B(kk, j + L));
        V av = S::bcast(A(i, kk));
        c00 = S::fma(av, b0, c00);
        c01 = S::fma(av, b1, c01);
        av = S::bcast(A(i + 1, kk));
        c10 = S::fma(av, b0, c10);
        c11 = S::fma(av, b1, c11);
        av = S::bcast(A(i + 2, kk));
        c20 = S::fma(av, b0, c20);
        c21 = S::fma(av, b1, c21);
        av = S::bcast(A(i + 3, kk));
        c30 = S::fma(av, b0, c30);
        c31 = S::fma(av, b1, c31);
      }
      S::store(C(i, j), c00);
      S::store(C(i, j + L), c01);
      S::store(C(i + 1, j), c10);
      S::store(C(i + 1, j + L), c11);
      S::store(C(i + 2, j), c20);
      S::store(C(i + 2, j + L), c21);
      S::store(C(i + 3, j), c30);
      S::store(C(i + 3, j + L), c31);
    }
    for (; i < m; ++i) {
      V c0 = S::load(C(i, j)), c1 = S::load(C(i, j + L));
      for (int kk = 0; kk < k; ++kk) {
        const V av = S::bcast(A(i, kk));
        c0 = S::fma(av, S::load(B(kk, j)), c0);
        c1 = S::fma(av, S::load(B(kk, j + L)), c1);
      }
      S::store(C(i, j), c0);
      S::store(C(i, j + L), c1);
    }
  }
  for (; j + L <= n; j += L) {
    for (int i = 0; i < m; ++i) {
      V c0 = S::load(C(i, j));
      for (int kk = 0; kk < k; ++kk) c0 = S::fma(S::bcast(A(i, kk)), S::load(B(kk, j)), c0);
      S::store(C(i, j), c0);
    }
  }
  for (; j < n; ++j) {
    for (int i = 0; i < m; ++i) {
      T s = *C(i, j);
      for (int kk = 0; kk < k; ++kk) s += A(i, kk) * *B(kk, j);
      *C(i, j) = s;
    }
  }
}

void gemm_f(bool trans_a, int m, int n, int k, const float* a, int lda,
            const float* b, int ldb, float* c, int ldc) {
  if (trans_a) {
    gemm_tiled<F32, true>(m, n, k, a, lda, b, ldb, c, ldc);
  } else {
    gemm_tiled<F32, false>(m, n, k, a, lda, b, ldb, c, ldc);
  }
}

void gemm_d(bool trans_a, int m, int n, int k, const double* a, int lda,
            const double* b, int ldb, double* c, int ldc) {
  if (trans_a) {
    gemm_tiled<F64, true>(m, n, k, a, lda, b, ldb, c, ldc);
  } else {
    gemm_tiled<F64, false>(m, n, k, a, lda, b, ldb, c, ldc);
  }
}

void gemm_abt_f(int m, int n, int k, const float* a, int lda, const float* b,
                int ldb, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      c[static_cast<std::size_t>(i) * ldc + j] +=
          dot_f(a + static_cast<std::size_t>(i) * lda, b + static_cast<std::size_t>(j) * ldb,
                static_cast<std::size_t>(k));
    }
  }
}

void gemm_abt_d(int m, int n, int k, const double* a, int lda, const double* b,
                int ldb, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      c[static_cast<std::size_t>(i) * ldc + j] +=
          dot_d(a + static_cast<std::size_t>(i) * lda, b + static_cast<std::size_t>(j) * ldb,
                static_cast<std::size_t>(k));
    }
  }
}

}  // namespace

const Table* avx2_table_impl() {
  static const Table table{dot_f,  dot_d,  axpy_f,     axpy_d,
                           gemm_f, gemm_d, gemm_abt_f, gemm_abt_d};
  return &table;
}

}  // namespace nmpose::kernels

#else

namespace nmpose::kernels {
const Table* avx2_table_impl() { return nullptr; }
}  // namespace nmpose::kernels

#endif
