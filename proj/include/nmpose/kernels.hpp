#pragma once

// Data-parallel inner loops used by the encoder, the contrastive losses and
// the render-and-compare scorer. Every kernel has a portable scalar reference
// and an AVX2/FMA variant; the variant is chosen once at startup from the CPU
// features (override with NMPOSE_ISA=scalar|avx2) and can be switched for
// equivalence testing. Results are deterministic for a fixed ISA.

#include <cstddef>
#include <string_view>

namespace nmpose::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view name(Isa isa);
bool supported(Isa isa);
Isa active();
// Throws nmpose::Error(kInvalidArgument) when the ISA is unavailable.
void select(Isa isa);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// y += a * x
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);

// C[m x n] += op(A) * B, all row-major. op(A) is A (m x k, row stride lda)
// or, with trans_a, the transpose of a stored k x m matrix.
void gemm_acc(bool trans_a, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float* c, int ldc);
void gemm_acc(bool trans_a, int m, int n, int k, const double* a, int lda,
              const double* b, int ldb, double* c, int ldc);

// C[m x n] += A * B^T with A m x k and B n x k (dot-product form).
void gemm_abt_acc(int m, int n, int k, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc);
void gemm_abt_acc(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc);

// Direct access to one implementation, bypassing dispatch. Used by the
// equivalence tests.
struct Table {
  float (*dot_f)(const float*, const float*, std::size_t);
  double (*dot_d)(const double*, const double*, std::size_t);
  void (*axpy_f)(float, const float*, float*, std::size_t);
  void (*axpy_d)(double, const double*, double*, std::size_t);
  void (*gemm_f)(bool, int, int, int, const float*, int, const float*, int,
                 float*, int);
  void (*gemm_d)(bool, int, int, int, const double*, int, const double*, int,
                 double*, int);
  void (*gemm_abt_f)(int, int, int, const float*, int, const float*, int,
                     float*, int);
  void (*gemm_abt_d)(int, int, int, const double*, int, const double*, int,
                     double*, int);
};

const Table& scalar_table();
// nullptr when the AVX2 variant was not compiled in or the CPU lacks it.
const Table* avx2_table();

}  // namespace nmpose::kernels
