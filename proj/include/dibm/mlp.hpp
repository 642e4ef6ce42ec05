#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dibm/autograd.hpp"
#include "dibm/rng.hpp"

namespace dibm {

/// Fully connected layer, weight stored [out, in].
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.value.cols(); }
  std::size_t out_features() const { return weight.value.rows(); }
  Var operator()(Tape& tape, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

/// N-layer perceptron; the activation is applied between layers, not after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Activation act, Rng& rng);

  Var forward(Tape& tape, Var input);
  // Convenience: runs without recording gradients.
  Tensor forward(const Tensor& input);

  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  Activation activation() const { return act_; }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Linear> layers_;
  Activation act_ = Activation::kIdentity;
};

// Same as Mlp::forward; exposed under the name used throughout the docs.
Var mlp_forward(Tape& tape, Mlp& params, Var input);

}  // namespace dibm
