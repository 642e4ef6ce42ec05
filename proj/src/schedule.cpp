#include "dibm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dibm/errors.hpp"

namespace dibm {

NoiseSchedule make_schedule(int train_steps) {
  if (train_steps < 2) throw ContractError("noise schedule needs at least 2 steps");
  constexpr double kOffset = 0.008;
  constexpr double kMaxBeta = 0.999;
  const auto f = [&](int t) {
    const double x = (static_cast<double>(t) / train_steps + kOffset) / (1.0 + kOffset);
    const double c = std::cos(x * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.steps = train_steps;
  double running = 1.0;
  for (int k = 0; k < train_steps; ++k) {
    const double beta = std::clamp(1.0 - f(k + 1) / f(k), 1e-8, kMaxBeta);
    const float b = static_cast<float>(beta);
    s.betas.push_back(b);
    s.alphas.push_back(1.0f - b);
    running *= (1.0 - static_cast<double>(b));
    s.alpha_bars.push_back(static_cast<float>(running));
  }
  return s;
}

InferenceSchedule make_inference_schedule(const NoiseSchedule& sched, int count) {
  if (count < 1 || count > sched.steps) {
    throw ContractError("inference step count must be in [1, " + std::to_string(sched.steps) + "]");
  }
  InferenceSchedule inf;
  for (int j = count - 1; j >= 0; --j) {
    inf.steps.push_back(static_cast<int>((static_cast<long long>(j) * sched.steps) / count));
  }
  return inf;
}

Tensor add_noise(const Tensor& chunk, const Tensor& eps, int k, const NoiseSchedule& sched) {
  if (!chunk.same_shape(eps)) {
    throw DimensionError("add_noise: noise shape " + shape_str(eps.shape()) + " != chunk shape " +
                         shape_str(chunk.shape()));
  }
  if (k < 0 || k >= sched.steps) throw ContractError("add_noise: step out of range");
  const float sa = std::sqrt(sched.alpha_bars[static_cast<std::size_t>(k)]);
  const float sn = std::sqrt(1.0f - sched.alpha_bars[static_cast<std::size_t>(k)]);
  Tensor out(chunk.shape());
  for (std::size_t i = 0; i < chunk.numel(); ++i) out[i] = sa * chunk[i] + sn * eps[i];
  return out;
}

Tensor add_noise_rows(const Tensor& chunks, const Tensor& eps, std::span<const int> ks,
                      const NoiseSchedule& sched) {
  if (!chunks.same_shape(eps)) throw DimensionError("add_noise: noise shape mismatch");
  if (ks.size() != chunks.rows()) throw DimensionError("add_noise: one step per row required");
  Tensor out(chunks.shape());
  const std::size_t w = chunks.cols();
  for (std::size_t r = 0; r < chunks.rows(); ++r) {
    const int k = ks[r];
    if (k < 0 || k >= sched.steps) throw ContractError("add_noise: step out of range");
    const float sa = std::sqrt(sched.alpha_bars[static_cast<std::size_t>(k)]);
    const float sn = std::sqrt(1.0f - sched.alpha_bars[static_cast<std::size_t>(k)]);
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = sa * chunks[r * w + c] + sn * eps[r * w + c];
  }
  return out;
}

Tensor ddim_update(const Tensor& a_k, const Tensor& eps_hat, int k, int k_prev,
                   const NoiseSchedule& sched) {
  if (!a_k.same_shape(eps_hat)) throw DimensionError("ddim_update: shape mismatch");
  const float abar = sched.alpha_bars.at(static_cast<std::size_t>(k));
  const float sa = std::sqrt(abar), sn = std::sqrt(1.0f - abar);
  Tensor out(a_k.shape());
  const float abar_prev = k_prev < 0 ? 1.0f : sched.alpha_bars.at(static_cast<std::size_t>(k_prev));
  const float pa = std::sqrt(abar_prev), pn = std::sqrt(1.0f - abar_prev);
  for (std::size_t i = 0; i < a_k.numel(); ++i) {
    const float x0 = std::clamp((a_k[i] - sn * eps_hat[i]) / sa, -1.0f, 1.0f);
    out[i] = k_prev < 0 ? x0 : pa * x0 + pn * eps_hat[i];
  }
  return out;
}

Tensor denoise_step(const NoiseFn& predict, const Tensor& a_k, int k, const NoiseSchedule& sched,
                    const InferenceSchedule& infer) {
  const auto it = std::find(infer.steps.begin(), infer.steps.end(), k);
  if (it == infer.steps.end()) {
    throw ContractError("denoise_step: step " + std::to_string(k) + " is not in the inference schedule");
  }
  const int k_prev = (it + 1 == infer.steps.end()) ? -1 : *(it + 1);
  return ddim_update(a_k, predict(a_k, k), k, k_prev, sched);
}

}  // namespace dibm
