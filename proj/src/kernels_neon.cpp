#include <arm_neon.h>

#include <cmath>

#include "dibm/kernels.hpp"

namespace dibm::kernels {
namespace {

float dot_neon(std::size_t n, const float* a, const float* b) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
  float r = vaddvq_f32(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

void gemm_nt_neon(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_neon(k, a + i * k, b + j * k);
  }
}

inline void row_axpy(std::size_t n, float alpha, const float* x, float* y) {
  const float32x4_t av = vdupq_n_f32(alpha);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) vst1q_f32(y + j, vfmaq_f32(vld1q_f32(y + j), av, vld1q_f32(x + j)));
  for (; j < n; ++j) y[j] += alpha * x[j];
}

void gemm_nn_neon(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) row_axpy(n, a[i * k + p], b + p * n, c + i * n);
  }
}

void gemm_tn_neon(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                  float* c) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) row_axpy(n, a[p * m + i], b + p * n, c + i * n);
  }
}

void axpy_neon(std::size_t n, float alpha, const float* x, float* y) { row_axpy(n, alpha, x, y); }

void mul_neon(std::size_t n, const float* a, const float* b, float* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void adamw_neon(std::size_t n, float* param, const float* grad, float* m, float* v, float lr,
                float weight_decay, float beta1, float beta2, float eps, float bias1,
                float bias2) {
  // The update is memory bound at these sizes; the scalar loop vectorizes well.
  const float decay = 1.0f - lr * weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    m[i] = beta1 * m[i] + (1.0f - beta1) * g;
    v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
    param[i] = param[i] * decay - lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{
      "neon",    gemm_nt_neon, gemm_nn_neon, gemm_tn_neon,
      axpy_neon, mul_neon,     dot_neon,     adamw_neon,
  };
  return &table;
}

}  // namespace dibm::kernels
