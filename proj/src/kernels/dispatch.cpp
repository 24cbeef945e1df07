#include <atomic>
#include <cstdlib>
#include <string>

#include "nmpose/error.hpp"
#include "nmpose/kernels.hpp"

namespace nmpose::kernels {

const Table* avx2_table_impl();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* initial_table() {
  const Table* best = avx2_table() ? avx2_table() : &scalar_table();
  if (const char* env = std::getenv("NMPOSE_ISA")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && avx2_table()) return avx2_table();
  }
  return best;
}

std::atomic<const Table*>& active_table() {
  static std::atomic<const Table*> table{initial_table()};
  return table;
}

inline const Table& t() { return *active_table().load(std::memory_order_relaxed); }

}  // namespace

const Table* avx2_table() {
  static const Table* table = cpu_has_avx2() ? avx2_table_impl() : nullptr;
  return table;
}

std::string_view name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool supported(Isa isa) { return isa == Isa::kScalar || avx2_table() != nullptr; }

Isa active() { return active_table().load() == &scalar_table() ? Isa::kScalar : Isa::kAvx2; }

void select(Isa isa) {
  if (!supported(isa)) {
    throw Error(ErrorCode::kInvalidArgument,
                "kernel ISA not available: " + std::string(name(isa)));
  }
  active_table().store(isa == Isa::kAvx2 ? avx2_table() : &scalar_table());
}

float dot(const float* x, const float* y, std::size_t n) { return t().dot_f(x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { return t().dot_d(x, y, n); }
void axpy(float a, const float* x, float* y, std::size_t n) { t().axpy_f(a, x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { t().axpy_d(a, x, y, n); }

void gemm_acc(bool trans_a, int m, int n, int k, const float* a, int lda,
              const float* b, int ldb, float* c, int ldc) {
  t().gemm_f(trans_a, m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_acc(bool trans_a, int m, int n, int k, const double* a, int lda,
              const double* b, int ldb, double* c, int ldc) {
  t().gemm_d(trans_a, m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_abt_acc(int m, int n, int k, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc) {
  t().gemm_abt_f(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_abt_acc(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc) {
  t().gemm_abt_d(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace nmpose::kernels
