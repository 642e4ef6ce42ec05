#pragma once

#include <cstdint>
#include <vector>

#include "dibm/autograd.hpp"

namespace dibm {

struct AdamWOptions {
  float lr = 1e-3f;
  float weight_decay = 1e-6f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// AdamW over a fixed parameter list. Moment buffers are allocated to match
/// each parameter's shape at construction.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Parameter*> params, AdamWOptions options);

  // Applies one update from the parameters' current .grad and increments the step.
  void step();
  void zero_grad();

  std::uint64_t step_count() const noexcept { return step_; }
  const AdamWOptions& options() const noexcept { return options_; }
  void set_lr(float lr) noexcept { options_.lr = lr; }
  const std::vector<Parameter*>& params() const noexcept { return params_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamWOptions options_;
  std::uint64_t step_ = 0;
};

}  // namespace dibm
