#include "dibm/mlp.hpp"

#include <cmath>

#include "dibm/errors.hpp"

namespace dibm {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({out, in});
  for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  Tensor b({out});
  for (auto& v : b.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", std::move(b));
}

Var Linear::operator()(Tape& tape, Var x) {
  return ag::linear(x, tape.param(weight), tape.param(bias));
}

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& widths, Activation act,
         Rng& rng)
    : act_(act) {
  if (widths.size() < 2) throw ContractError("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
  }
}

Var Mlp::forward(Tape& tape, Var input) {
  if (input.value().cols() != in_features()) {
    throw DimensionError("mlp: input width " + std::to_string(input.value().cols()) +
                         " != expected " + std::to_string(in_features()));
  }
  Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](tape, h);
    if (i + 1 < layers_.size()) h = ag::activation(h, act_);
  }
  require_finite(h.value(), "mlp output");
  return h;
}

Tensor Mlp::forward(const Tensor& input) {
  Tape tape;
  tape.set_grad_enabled(false);
  return forward(tape, tape.constant(input)).value();
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l.collect(out);
}

Var mlp_forward(Tape& tape, Mlp& params, Var input) { return params.forward(tape, input); }

}  // namespace dibm
