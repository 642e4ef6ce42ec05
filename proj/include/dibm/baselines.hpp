#pragma once
// Comparison routers: per-layer softmax gating with a load-balancing penalty,
// and a fixed task-to-expert table.

#include <map>
#include <span>
#include <vector>

#include "dibm/model.hpp"

namespace dibm {

struct RoutingStats {
  std::vector<double> f;  // fraction of samples routed to each expert
  std::vector<double> p;  // mean gate probability of each expert
};

// L = K * sum_i f_i p_i. Equals 1 under uniform routing and K under collapse.
double load_balancing_loss(const RoutingStats& stats, std::size_t num_experts);
// Differentiable in the gate probabilities; f is treated as a constant.
Var load_balancing_loss(Var probs, std::span<const int> chosen);

RoutingStats routing_stats(const Tensor& probs, std::span<const int> chosen);

struct VanillaMoeOutput {
  Var output;
  Var probs;  // [B, K] gate softmax
  std::vector<int> chosen;
  RoutingStats stats;
};

// Top-1 routing: each row goes to its highest-probability expert and the
// expert output is scaled by that probability.
VanillaMoeOutput vanilla_moe_forward(Tape& tape, MoeLayer& layer, Linear& gate, Var x,
                                     Var gate_input, Activation act);

class VanillaGateRouter final : public ExpertRouter {
 public:
  explicit VanillaGateRouter(std::vector<Linear>& gates) : gates_(gates) {}
  Var route(Tape& tape, MoeLayer& layer, Var x, Var cond, Activation act,
            std::size_t moe_index) override;

  // Sum over MoE layers of the differentiable balancing losses of the last forward.
  const std::vector<Var>& balance_terms() const { return balance_; }
  const std::vector<RoutingStats>& stats() const { return stats_; }
  const std::vector<std::vector<int>>& chosen() const { return chosen_; }

 private:
  std::vector<Linear>& gates_;
  std::vector<Var> balance_;
  std::vector<RoutingStats> stats_;
  std::vector<std::vector<int>> chosen_;
};

struct TaskAssignment {
  std::map<int, int> expert_of_task;

  static TaskAssignment from_vector(std::span<const int> experts);
  static TaskAssignment identity(int n);
};

// Expert id for the task encoded in the observation's one-hot.
int taskwise_route(const TaskAssignment& assignment, std::span<const float> obs);
std::vector<int> taskwise_route_batch(const TaskAssignment& assignment, const Tensor& obs);

}  // namespace dibm
