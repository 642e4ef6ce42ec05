#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dibm/tensor.hpp"

namespace dibm {

/// Cosine-shaped DDPM schedule over T training steps (index 0 = least noise).
struct NoiseSchedule {
  int steps = 0;
  std::vector<float> betas;
  std::vector<float> alphas;
  std::vector<float> alpha_bars;
};

NoiseSchedule make_schedule(int train_steps);

// Descending training-step indices visited by the strided sampler.
struct InferenceSchedule {
  std::vector<int> steps;
};

// `count` indices floor(j * T / count), j = 0..count-1, visited high to low.
InferenceSchedule make_inference_schedule(const NoiseSchedule& sched, int count);

// a^k = sqrt(abar_k) a + sqrt(1 - abar_k) eps, for one chunk.
Tensor add_noise(const Tensor& chunk, const Tensor& eps, int k, const NoiseSchedule& sched);
// Row r uses step ks[r].
Tensor add_noise_rows(const Tensor& chunks, const Tensor& eps, std::span<const int> ks,
                      const NoiseSchedule& sched);

// Deterministic (eta = 0) reverse update from step k to k_prev using predicted
// noise. k_prev < 0 means the final step: the clean-action estimate is returned.
// The clean-action estimate is clamped to [-1,1].
Tensor ddim_update(const Tensor& a_k, const Tensor& eps_hat, int k, int k_prev,
                   const NoiseSchedule& sched);

using NoiseFn = std::function<Tensor(const Tensor& a_k, int k)>;

// One reverse step of the strided sampler; k must belong to `infer`.
Tensor denoise_step(const NoiseFn& predict, const Tensor& a_k, int k, const NoiseSchedule& sched,
                    const InferenceSchedule& infer);

}  // namespace dibm
