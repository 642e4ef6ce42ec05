#include <cmath>

#include "dibm/kernels.hpp"

namespace dibm::kernels {
namespace {

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* bj = b + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    float* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn_scalar(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                    float* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const float* ap = a + p * m;
    const float* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float api = ap[i];
      float* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void axpy_scalar(std::size_t n, float alpha, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul_scalar(std::size_t n, const float* a, const float* b, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

float dot_scalar(std::size_t n, const float* a, const float* b) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void adamw_scalar(std::size_t n, float* param, const float* grad, float* m, float* v, float lr,
                  float weight_decay, float beta1, float beta2, float eps, float bias1,
                  float bias2) {
  const float decay = 1.0f - lr * weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    m[i] = beta1 * m[i] + (1.0f - beta1) * g;
    v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
    const float m_hat = m[i] / bias1;
    const float v_hat = v[i] / bias2;
    param[i] = param[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",     gemm_nt_scalar, gemm_nn_scalar, gemm_tn_scalar,
      axpy_scalar,  mul_scalar,     dot_scalar,     adamw_scalar,
  };
  return table;
}

}  // namespace dibm::kernels
