#pragma once
// Reverse-mode differentiation over an explicitly recorded tape.
//
// A Tape owns every intermediate value of one forward pass. Nodes are appended
// in evaluation order, so reverse creation order is a valid topological order
// for the backward sweep. Parameters live outside the tape and receive their
// gradients (accumulated) when `backward` finishes.
//
// `stop_gradient` records a node that carries its input's value but has no
// parents: nothing upstream of it can receive gradient through it.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dibm/tensor.hpp"

namespace dibm {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, zeroed by the optimizer

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0f) {}
  void zero_grad() { grad.fill(0.0f); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Activation { kRelu, kGelu, kTanh, kIdentity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);
  Var stop_gradient(Var x);

  // Scalar loss only. Fills parameter grads (accumulating) and node grads.
  void backward(Var loss);

  // When disabled every new node is a constant; parameters are read, not tracked.
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Node gradient after backward; nullptr if nothing flowed into the node.
  const Tensor* grad(int id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-construction interface used by the free functions below.
  Var push(Tensor value, std::vector<int> parents, BackwardFn fn);
  Tensor& grad_buffer(int id);  // lazily zero-allocated
  const Tensor& node_grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<int> parents;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable references: values stay valid while recording
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_ = true;
};

class NoGradScope {
 public:
  explicit NoGradScope(Tape& t) : tape_(t), prev_(t.grad_enabled()) { t.set_grad_enabled(false); }
  ~NoGradScope() { tape_.set_grad_enabled(prev_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

namespace ag {

// y[B,out] = x[B,in] * W[out,in]^T + b[out]
Var linear(Var x, Var weight, Var bias);

// Elementwise with broadcasting of `b` when it is [1,C] (per column) or [R,1] (per row).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);

Var activation(Var x, Activation act);
Var exp(Var x);
Var log(Var x);

Var concat_cols(Var a, Var b);
Var gather_rows(Var x, std::span<const int> rows);
// Rows of `x` added into a zero [n_rows, C] tensor at positions `rows`.
Var scatter_rows(Var x, std::span<const int> rows, std::size_t n_rows);
// out[i] = x[i, cols[i]] as [R,1].
Var pick_cols(Var x, std::span<const int> cols);

Var sum(Var x);        // [1]
Var mean(Var x);       // [1]
Var mean_rows(Var x);  // [R,C] -> [1,C]
Var mean_cols(Var x);  // [R,C] -> [R,1]
// Per-row mean squared error -> [R,1].
Var mse_rows(Var pred, Var target);

// axis 0: normalize each column over rows; axis 1: each row over columns.
Var log_softmax(Var x, int axis);
Var softmax(Var x, int axis);

}  // namespace ag

// Non-differentiable helpers on plain tensors, max-subtracted.
Tensor log_softmax_values(const Tensor& x, int axis);
Tensor softmax_values(const Tensor& x, int axis);
float logsumexp(std::span<const float> v);

}  // namespace dibm
