#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "nmpose/error.hpp"
#include "nmpose/kernels.hpp"

using namespace nmpose;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

const kernels::Table* simd() { return kernels::avx2_table(); }

}  // namespace

TEST(Kernels, DispatchReportsActiveIsa) {
  EXPECT_TRUE(kernels::supported(kernels::Isa::kScalar));
  const auto before = kernels::active();
  kernels::select(kernels::Isa::kScalar);
  EXPECT_EQ(kernels::active(), kernels::Isa::kScalar);
  if (kernels::supported(kernels::Isa::kAvx2)) {
    kernels::select(kernels::Isa::kAvx2);
    EXPECT_EQ(kernels::active(), kernels::Isa::kAvx2);
  } else {
    EXPECT_THROW(kernels::select(kernels::Isa::kAvx2), Error);
  }
  kernels::select(before);
}

TEST(Kernels, DotMatchesScalar) {
  if (!simd()) GTEST_SKIP() << "no AVX2 on this machine";
  std::mt19937_64 rng(1);
  for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 15u, 16u, 17u, 64u, 1000u}) {
    const auto xd = random_vec<double>(n, rng), yd = random_vec<double>(n, rng);
    EXPECT_NEAR(simd()->dot_d(xd.data(), yd.data(), n), kernels::scalar_table().dot_d(xd.data(), yd.data(), n),
                1e-12 * (n + 1));
    const auto xf = random_vec<float>(n, rng), yf = random_vec<float>(n, rng);
    EXPECT_NEAR(simd()->dot_f(xf.data(), yf.data(), n), kernels::scalar_table().dot_f(xf.data(), yf.data(), n),
                1e-5f * (n + 1));
  }
}

TEST(Kernels, AxpyMatchesScalar) {
  if (!simd()) GTEST_SKIP() << "no AVX2 on this machine";
  std::mt19937_64 rng(2);
  for (std::size_t n : {1u, 5u, 8u, 13u, 100u}) {
    const auto x = random_vec<double>(n, rng);
    auto y1 = random_vec<double>(n, rng);
    auto y2 = y1;
    simd()->axpy_d(0.37, x.data(), y1.data(), n);
    kernels::scalar_table().axpy_d(0.37, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15);
    const auto xf = random_vec<float>(n, rng);
    auto z1 = random_vec<float>(n, rng);
    auto z2 = z1;
    simd()->axpy_f(-1.5f, xf.data(), z1.data(), n);
    kernels::scalar_table().axpy_f(-1.5f, xf.data(), z2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(z1[i], z2[i], 1e-6f);
  }
}

template <typename T>
void check_gemm(bool trans_a, int m, int n, int k, std::mt19937_64& rng, double tol) {
  const int lda = trans_a ? m + 1 : k + 2;
  const int ldb = n + 3;
  const int ldc = n + 1;
  const auto a = random_vec<T>(static_cast<std::size_t>(trans_a ? k : m) * lda, rng);
  const auto b = random_vec<T>(static_cast<std::size_t>(k) * ldb, rng);
  auto c1 = random_vec<T>(static_cast<std::size_t>(m) * ldc, rng);
  auto c2 = c1;
  // Plain triple loop as the reference.
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int kk = 0; kk < k; ++kk) {
        const T av = trans_a ? a[static_cast<std::size_t>(kk) * lda + i] : a[static_cast<std::size_t>(i) * lda + kk];
        s += double(av) * double(b[static_cast<std::size_t>(kk) * ldb + j]);
      }
      c2[static_cast<std::size_t>(i) * ldc + j] += static_cast<T>(s);
    }
  }
  auto c3 = c1;
  if constexpr (std::is_same_v<T, double>) {
    kernels::scalar_table().gemm_d(trans_a, m, n, k, a.data(), lda, b.data(), ldb, c3.data(), ldc);
    if (simd()) simd()->gemm_d(trans_a, m, n, k, a.data(), lda, b.data(), ldb, c1.data(), ldc);
  } else {
    kernels::scalar_table().gemm_f(trans_a, m, n, k, a.data(), lda, b.data(), ldb, c3.data(), ldc);
    if (simd()) simd()->gemm_f(trans_a, m, n, k, a.data(), lda, b.data(), ldb, c1.data(), ldc);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * ldc + j;
      ASSERT_NEAR(c3[idx], c2[idx], tol * (k + 1));
      if (simd()) {
        ASSERT_NEAR(c1[idx], c2[idx], tol * (k + 1));
      }
    }
  }
}

TEST(Kernels, GemmMatchesReference) {
  std::mt19937_64 rng(3);
  for (bool t : {false, true}) {
    for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 5, 7}, {4, 16, 9}, {9, 33, 17}, {16, 64, 75}, {5, 100, 1}}) {
      check_gemm<double>(t, m, n, k, rng, 1e-13);
      check_gemm<float>(t, m, n, k, rng, 1e-5);
    }
  }
}

TEST(Kernels, GemmAbtMatchesScalar) {
  if (!simd()) GTEST_SKIP() << "no AVX2 on this machine";
  std::mt19937_64 rng(4);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {7, 5, 64}, {32, 288, 100}}) {
    const auto a = random_vec<double>(static_cast<std::size_t>(m) * k, rng);
    const auto b = random_vec<double>(static_cast<std::size_t>(n) * k, rng);
    std::vector<double> c1(static_cast<std::size_t>(m) * n, 0.5), c2 = c1;
    simd()->gemm_abt_d(m, n, k, a.data(), k, b.data(), k, c1.data(), n);
    kernels::scalar_table().gemm_abt_d(m, n, k, a.data(), k, b.data(), k, c2.data(), n);
    for (std::size_t i = 0; i < c1.size(); ++i) ASSERT_NEAR(c1[i], c2[i], 1e-12 * k);
    const auto af = random_vec<float>(static_cast<std::size_t>(m) * k, rng);
    const auto bf = random_vec<float>(static_cast<std::size_t>(n) * k, rng);
    std::vector<float> d1(static_cast<std::size_t>(m) * n, 0.f), d2 = d1;
    simd()->gemm_abt_f(m, n, k, af.data(), k, bf.data(), k, d1.data(), n);
    kernels::scalar_table().gemm_abt_f(m, n, k, af.data(), k, bf.data(), k, d2.data(), n);
    for (std::size_t i = 0; i < d1.size(); ++i) ASSERT_NEAR(d1[i], d2[i], 1e-5f * k);
  }
}
