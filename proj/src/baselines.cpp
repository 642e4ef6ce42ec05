#include "dibm/baselines.hpp"

#include <algorithm>

#include "dibm/env.hpp"
#include "dibm/errors.hpp"

namespace dibm {

double load_balancing_loss(const RoutingStats& stats, std::size_t k) {
  if (stats.f.size() != k || stats.p.size() != k) {
    throw DimensionError("routing stats length differs from expert count");
  }
  // (1/K) sum (K f_i)(K p_i): exact at uniformity and at collapse.
  const double kk = static_cast<double>(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += (kk * stats.f[i]) * (kk * stats.p[i]);
  return acc / kk;
}

RoutingStats routing_stats(const Tensor& probs, std::span<const int> chosen) {
  const std::size_t b = probs.rows(), k = probs.cols();
  if (chosen.size() != b) throw DimensionError("one routed expert per row expected");
  RoutingStats s;
  s.f.assign(k, 0.0);
  s.p.assign(k, 0.0);
  if (b == 0) return s;
  for (std::size_t r = 0; r < b; ++r) {
    s.f[static_cast<std::size_t>(chosen[r])] += 1.0;
    for (std::size_t e = 0; e < k; ++e) s.p[e] += probs.at(r, e);
  }
  for (std::size_t e = 0; e < k; ++e) {
    s.f[e] /= static_cast<double>(b);
    s.p[e] /= static_cast<double>(b);
  }
  return s;
}

Var load_balancing_loss(Var probs, std::span<const int> chosen) {
  Tape& tape = *probs.tape();
  const std::size_t k = probs.value().cols();
  RoutingStats s = routing_stats(probs.value(), chosen);
  Tensor f({1, k});
  for (std::size_t e = 0; e < k; ++e) f[e] = static_cast<float>(s.f[e]);
  Var p = ag::mean_rows(probs);
  return ag::scale(ag::sum(ag::mul(p, tape.constant(std::move(f)))), static_cast<float>(k));
}

VanillaMoeOutput vanilla_moe_forward(Tape& tape, MoeLayer& layer, Linear& gate, Var x,
                                     Var gate_input, Activation act) {
  const std::size_t b = x.value().rows();
  const std::size_t k = layer.num_experts();
  if (gate.out_features() != k) throw DimensionError("gate width differs from expert count");
  VanillaMoeOutput out;
  out.probs = ag::softmax(gate(tape, gate_input), 1);
  const Tensor& pv = out.probs.value();
  out.chosen.resize(b);
  for (std::size_t r = 0; r < b; ++r) {
    auto row = pv.row_span(r);
    out.chosen[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  Var combined;
  for (std::size_t e = 0; e < k; ++e) {
    std::vector<int> rows;
    for (std::size_t r = 0; r < b; ++r) {
      if (out.chosen[r] == static_cast<int>(e)) rows.push_back(static_cast<int>(r));
    }
    if (rows.empty()) continue;
    Var part = rows.size() == b ? layer.experts[e](tape, x, act)
                                : expert_on_rows(tape, layer.experts[e], x, rows, b, act);
    combined = combined.valid() ? ag::add(combined, part) : part;
  }
  out.output = ag::mul(combined, ag::pick_cols(out.probs, out.chosen));
  out.stats = routing_stats(pv, out.chosen);
  return out;
}

Var VanillaGateRouter::route(Tape& tape, MoeLayer& layer, Var x, Var cond, Activation act,
                             std::size_t moe_index) {
  if (moe_index >= gates_.size()) throw ContractError("no gate for MoE layer " + std::to_string(moe_index));
  if (moe_index == 0) {
    balance_.clear();
    stats_.clear();
    chosen_.clear();
  }
  VanillaMoeOutput r = vanilla_moe_forward(tape, layer, gates_[moe_index], x, cond, act);
  if (tape.grad_enabled()) balance_.push_back(load_balancing_loss(r.probs, r.chosen));
  stats_.push_back(std::move(r.stats));
  chosen_.push_back(std::move(r.chosen));
  return r.output;
}

TaskAssignment TaskAssignment::from_vector(std::span<const int> experts) {
  TaskAssignment a;
  for (std::size_t t = 0; t < experts.size(); ++t) a.expert_of_task[static_cast<int>(t)] = experts[t];
  return a;
}

TaskAssignment TaskAssignment::identity(int n) {
  TaskAssignment a;
  for (int t = 0; t < n; ++t) a.expert_of_task[t] = t;
  return a;
}

int taskwise_route(const TaskAssignment& assignment, std::span<const float> obs) {
  const int task = env::task_from_observation(std::vector<float>(obs.begin(), obs.end()));
  if (task < 0) throw RoutingError("observation does not carry a valid task one-hot");
  auto it = assignment.expert_of_task.find(task);
  if (it == assignment.expert_of_task.end()) {
    throw RoutingError("task " + std::to_string(task) + " has no assigned expert");
  }
  return it->second;
}

std::vector<int> taskwise_route_batch(const TaskAssignment& assignment, const Tensor& obs) {
  std::vector<int> out(obs.rows());
  for (std::size_t r = 0; r < obs.rows(); ++r) out[r] = taskwise_route(assignment, obs.row_span(r));
  return out;
}

}  // namespace dibm
