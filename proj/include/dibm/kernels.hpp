#pragma once
// Data-parallel inner loops of the numeric core.
//
// Every kernel has a scalar reference implementation. SIMD variants (AVX2+FMA
// on x86-64, NEON on aarch64) live in their own translation units and are
// selected once at startup from CPUID; `DIBM_KERNELS=scalar` in the environment
// forces the reference path. Variants agree with the reference to float
// rounding, not bit-for-bit (FMA contraction and summation order differ).

#include <cstddef>
#include <string_view>

namespace dibm::kernels {

// All matrices are row-major and densely packed.
struct KernelTable {
  std::string_view name;

  // C[m,n] += sum_k A[m,k] * B[n,k]
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c);
  // C[m,n] += sum_k A[m,k] * B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c);
  // C[m,n] += sum_k A[k,m] * B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c);
  // y += alpha * x
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);
  // out = a * b (elementwise)
  void (*mul)(std::size_t n, const float* a, const float* b, float* out);
  float (*dot)(std::size_t n, const float* a, const float* b);
  // Decoupled-weight-decay Adam on a flat parameter block. `bias1`/`bias2` are
  // the bias-correction denominators 1 - beta^t.
  void (*adamw)(std::size_t n, float* param, const float* grad, float* m, float* v, float lr,
                float weight_decay, float beta1, float beta2, float eps, float bias1, float bias2);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table every library routine uses. Chosen once per process.
const KernelTable& active();

}  // namespace dibm::kernels
