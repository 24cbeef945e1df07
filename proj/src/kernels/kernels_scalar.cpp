#include "nmpose/kernels.hpp"

namespace nmpose::kernels {
namespace {

template <typename T>
T dot_ref(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_ref(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void gemm_ref(bool trans_a, int m, int n, int k, const T* a, int lda,
              const T* b, int ldb, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int kk = 0; kk < k; ++kk) {
      const T aik = trans_a ? a[static_cast<std::size_t>(kk) * lda + i]
                            : a[static_cast<std::size_t>(i) * lda + kk];
      if (aik == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(kk) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void gemm_abt_ref(int m, int n, int k, const T* a, int lda, const T* b,
                  int ldb, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      c[static_cast<std::size_t>(i) * ldc + j] +=
          dot_ref(a + static_cast<std::size_t>(i) * lda,
                  b + static_cast<std::size_t>(j) * ldb,
                  static_cast<std::size_t>(k));
    }
  }
}

}  // namespace

const Table& scalar_table() {
  static const Table table{
      &dot_ref<float>,      &dot_ref<double>,     &axpy_ref<float>,
      &axpy_ref<double>,    &gemm_ref<float>,     &gemm_ref<double>,
      &gemm_abt_ref<float>, &gemm_abt_ref<double>,
  };
  return table;
}

}  // namespace nmpose::kernels
