#include "dibm/optim.hpp"

#include <cmath>

#include "dibm/errors.hpp"
#include "dibm/kernels.hpp"

namespace dibm {

AdamW::AdamW(std::vector<Parameter*> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0f);
    v_.emplace_back(p->value.shape(), 0.0f);
  }
}

void AdamW::step() {
  for (Parameter* p : params_) {
    if (!p->grad.same_shape(p->value)) {
      throw ContractError("adamw: missing gradient for parameter '" + p->name + "'");
    }
  }
  ++step_;
  const auto t = static_cast<double>(step_);
  const auto bias1 = static_cast<float>(1.0 - std::pow(static_cast<double>(options_.beta1), t));
  const auto bias2 = static_cast<float>(1.0 - std::pow(static_cast<double>(options_.beta2), t));
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    k.adamw(p->value.numel(), p->value.data(), p->grad.data(), m_[i].data(), v_[i].data(),
            options_.lr, options_.weight_decay, options_.beta1, options_.beta2, options_.eps,
            bias1, bias2);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace dibm
