#include "dibm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dibm/errors.hpp"
#include "dibm/kernels.hpp"

namespace dibm {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ContractError("unknown activation '" + name + "'");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  if (!grad_enabled_) return constant(p.value);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::stop_gradient(Var x) { return constant(x.value()); }

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  bool any = false;
  if (grad_enabled_) {
    for (int p : parents) any = any || nodes_[p].requires_grad;
  }
  if (any) {
    n.requires_grad = true;
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
  return n.grad;
}

const Tensor* Tape::grad(int id) const {
  const Node& n = nodes_[id];
  return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id()).numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(value(loss.id()).shape()));
  }
  require_finite(value(loss.id()), "loss");
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).fill(1.0f);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  const auto& k = kernels::active();
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    require_finite(n.grad, n.param->name.c_str());
    k.axpy(n.grad.numel(), 1.0f, n.grad.data(), n.param->grad.data());
  }
}

namespace ag {
namespace {

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()));
}

inline std::size_t b_index(Broadcast kind, std::size_t r, std::size_t c, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

// Accumulate g (shaped like a) into the gradient of a broadcast operand.
void reduce_into(Tensor& gb, Broadcast kind, const Tensor& g) {
  const std::size_t rows = g.rows(), cols = g.cols();
  if (kind == Broadcast::kSame) {
    kernels::active().axpy(g.numel(), 1.0f, g.data(), gb.data());
    return;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) gb[b_index(kind, r, c, cols)] += g[r * cols + c];
  }
}

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return *a.tape();
}

}  // namespace

Var linear(Var x, Var weight, Var bias) {
  Tape& t = same_tape(x, weight);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t batch = xv.rows(), in = xv.cols(), out = wv.rows();
  if (wv.cols() != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " != weight in-width " +
                         std::to_string(wv.cols()));
  }
  if (bias.value().numel() != out) throw DimensionError("linear: bias width mismatch");
  Tensor y({batch, out});
  const float* bv = bias.value().data();
  for (std::size_t r = 0; r < batch; ++r) std::copy(bv, bv + out, y.data() + r * out);
  kernels::active().gemm_nt(batch, out, in, xv.data(), wv.data(), y.data());

  const int xi = x.id(), wi = weight.id(), bi = bias.id();
  return t.push(std::move(y), {xi, wi, bi}, [=](Tape& tp, int self) {
    const auto& k = kernels::active();
    const Tensor& gy = tp.node_grad(self);
    if (tp.requires_grad(xi)) {
      k.gemm_nn(batch, in, out, gy.data(), tp.value(wi).data(), tp.grad_buffer(xi).data());
    }
    if (tp.requires_grad(wi)) {
      k.gemm_tn(out, in, batch, gy.data(), tp.value(xi).data(), tp.grad_buffer(wi).data());
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t r = 0; r < batch; ++r) k.axpy(out, 1.0f, gy.data() + r * out, gb.data());
    }
  });
}

namespace {

Var binary(Var a, Var b, const char* op, float sign_b, bool multiply) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op);
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float x = av[r * cols + c];
      const float z = bv[b_index(kind, r, c, cols)];
      y[r * cols + c] = multiply ? x * z : x + sign_b * z;
    }
  }
  const int ai = a.id(), bi = b.id();
  return t.push(std::move(y), {ai, bi}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    if (!multiply) {
      if (tp.requires_grad(ai)) kernels::active().axpy(g.numel(), 1.0f, g.data(), tp.grad_buffer(ai).data());
      if (tp.requires_grad(bi)) {
        if (sign_b == 1.0f) {
          reduce_into(tp.grad_buffer(bi), kind, g);
        } else {
          Tensor neg(g.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
          reduce_into(tp.grad_buffer(bi), kind, neg);
        }
      }
      return;
    }
    const Tensor& av2 = tp.value(ai);
    const Tensor& bv2 = tp.value(bi);
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += g[r * cols + c] * bv2[b_index(kind, r, c, cols)];
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gb[b_index(kind, r, c, cols)] += g[r * cols + c] * av2[r * cols + c];
    }
  });
}

template <typename F, typename D>
Var unary(Var x, F f, D dfdx) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    const Tensor& in = tp.value(xi);
    const Tensor& out = tp.value(self);
    Tensor& gx = tp.grad_buffer(xi);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * dfdx(in[i], out[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, "add", 1.0f, false); }
Var sub(Var a, Var b) { return binary(a, b, "sub", -1.0f, false); }
Var mul(Var a, Var b) { return binary(a, b, "mul", 1.0f, true); }

Var scale(Var a, float s) {
  return unary(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(Var a, float s) {
  return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var activation(Var x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return unary(
          x, [](float v) { return v > 0.0f ? v : 0.0f; },
          [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
    case Activation::kGelu: {
      constexpr float kInvSqrt2 = 0.70710678118654752f;
      constexpr float kInvSqrt2Pi = 0.39894228040143268f;
      return unary(
          x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
          [](float v, float) {
            const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
            return cdf + v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
          });
    }
    case Activation::kTanh:
      return unary(
          x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
    case Activation::kIdentity:
      return unary(
          x, [](float v) { return v; }, [](float, float) { return 1.0f; });
  }
  return x;
}

Var exp(Var x) {
  return unary(
      x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Var log(Var x) {
  return unary(
      x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor y({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, y.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
  }
  const int ai = a.id(), bi = b.id();
  return t.push(std::move(y), {ai, bi}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    const auto& k = kernels::active();
    if (tp.requires_grad(ai)) {
      Tensor& ga = tp.grad_buffer(ai);
      for (std::size_t r = 0; r < rows; ++r) k.axpy(ca, 1.0f, g.data() + r * (ca + cb), ga.data() + r * ca);
    }
    if (tp.requires_grad(bi)) {
      Tensor& gb = tp.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        k.axpy(cb, 1.0f, g.data() + r * (ca + cb) + ca, gb.data() + r * cb);
    }
  });
}

Var gather_rows(Var x, std::span<const int> rows) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  Tensor y({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= xv.rows()) {
      throw DimensionError("gather_rows: row index out of range");
    }
    std::copy_n(xv.data() + rows[i] * cols, cols, y.data() + i * cols);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=, idx = std::move(idx)](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    const auto& k = kernels::active();
    for (std::size_t i = 0; i < idx.size(); ++i)
      k.axpy(cols, 1.0f, g.data() + i * cols, gx.data() + idx[i] * cols);
  });
}

Var scatter_rows(Var x, std::span<const int> rows, std::size_t n_rows) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rows() != rows.size()) throw DimensionError("scatter_rows: index count mismatch");
  const std::size_t cols = xv.cols();
  Tensor y({n_rows, cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= n_rows) {
      throw DimensionError("scatter_rows: row index out of range");
    }
    for (std::size_t c = 0; c < cols; ++c) y[rows[i] * cols + c] += xv[i * cols + c];
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=, idx = std::move(idx)](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    const auto& k = kernels::active();
    for (std::size_t i = 0; i < idx.size(); ++i)
      k.axpy(cols, 1.0f, g.data() + idx[i] * cols, gx.data() + i * cols);
  });
}

Var pick_cols(Var x, std::span<const int> cols) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  if (xv.rows() != cols.size()) throw DimensionError("pick_cols: index count mismatch");
  const std::size_t width = xv.cols();
  Tensor y({cols.size(), 1});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= width) {
      throw DimensionError("pick_cols: column index out of range");
    }
    y[r] = xv[r * width + cols[r]];
  }
  std::vector<int> idx(cols.begin(), cols.end());
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=, idx = std::move(idx)](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * width + idx[r]] += g[r];
  });
}

Var sum(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (float v : xv.values()) acc += v;
  const int xi = x.id();
  return t.push(Tensor::scalar(static_cast<float>(acc)), {xi}, [=](Tape& tp, int self) {
    const float g = tp.node_grad(self)[0];
    Tensor& gx = tp.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(n));
}

Var mean_rows(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor y({1, cols});
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += xv[r * cols + c];
    y[c] = static_cast<float>(acc / static_cast<double>(rows));
  }
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    const float inv = 1.0f / static_cast<float>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] * inv;
  });
}

Var mean_cols(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor y({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += xv[r * cols + c];
    y[r] = static_cast<float>(acc / static_cast<double>(cols));
  }
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    Tensor& gx = tp.grad_buffer(xi);
    const float inv = 1.0f / static_cast<float>(cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r] * inv;
  });
}

Var mse_rows(Var pred, Var target) {
  Tape& t = same_tape(pred, target);
  const Tensor& pv = pred.value();
  const Tensor& tv = target.value();
  if (!pv.same_shape(tv)) {
    throw DimensionError("mse: prediction " + shape_str(pv.shape()) + " vs target " +
                         shape_str(tv.shape()));
  }
  const std::size_t rows = pv.rows(), cols = pv.cols();
  Tensor y({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(pv[r * cols + c]) - tv[r * cols + c];
      acc += d * d;
    }
    y[r] = static_cast<float>(acc / static_cast<double>(cols));
  }
  const int pi = pred.id(), ti = target.id();
  return t.push(std::move(y), {pi, ti}, [=](Tape& tp, int self) {
    const Tensor& g = tp.node_grad(self);
    const Tensor& p = tp.value(pi);
    const Tensor& q = tp.value(ti);
    const float s = 2.0f / static_cast<float>(cols);
    if (tp.requires_grad(pi)) {
      Tensor& gp = tp.grad_buffer(pi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gp[r * cols + c] += g[r] * s * (p[r * cols + c] - q[r * cols + c]);
    }
    if (tp.requires_grad(ti)) {
      Tensor& gq = tp.grad_buffer(ti);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gq[r * cols + c] -= g[r] * s * (p[r * cols + c] - q[r * cols + c]);
    }
  });
}

Var log_softmax(Var x, int axis) {
  Tape& t = *x.tape();
  Tensor y = log_softmax_values(x.value(), axis);
  const std::size_t rows = y.rows(), cols = y.cols();
  const int xi = x.id();
  return t.push(std::move(y), {xi}, [=](Tape& tp, int self) {
    // dx = g - softmax * sum(g) along the normalized axis
    const Tensor& g = tp.node_grad(self);
    const Tensor& ls = tp.value(self);
    Tensor& gx = tp.grad_buffer(xi);
    if (axis == 0) {
      for (std::size_t c = 0; c < cols; ++c) {
        double gs = 0.0;
        for (std::size_t r = 0; r < rows; ++r) gs += g[r * cols + c];
        for (std::size_t r = 0; r < rows; ++r)
          gx[r * cols + c] += g[r * cols + c] - std::exp(ls[r * cols + c]) * static_cast<float>(gs);
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += g[r * cols + c] - std::exp(ls[r * cols + c]) * static_cast<float>(gs);
      }
    }
  });
}

Var softmax(Var x, int axis) { return exp(log_softmax(x, axis)); }

}  // namespace ag

float logsumexp(std::span<const float> v) {
  if (v.empty()) return -std::numeric_limits<float>::infinity();
  const float mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (float x : v) acc += std::exp(static_cast<double>(x) - mx);
  return static_cast<float>(mx + std::log(acc));
}

Tensor log_softmax_values(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw ContractError("log_softmax: axis must be 0 or 1");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  std::vector<float> lane;
  if (axis == 0) {
    lane.resize(rows);
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) lane[r] = x[r * cols + c];
      const float lse = logsumexp(lane);
      for (std::size_t r = 0; r < rows; ++r) y[r * cols + c] = lane[r] - lse;
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = x.row_span(r);
      const float lse = logsumexp(row);
      for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = row[c] - lse;
    }
  }
  return y;
}

Tensor softmax_values(const Tensor& x, int axis) {
  Tensor y = log_softmax_values(x, axis);
  for (auto& v : y.values()) v = std::exp(v);
  return y;
}

}  // namespace dibm
