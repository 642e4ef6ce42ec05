#pragma once
// Energy-based gating: g(o, e) per observation and expert, and the
// distributions derived from it.
//
//   batch conditional  pi(o_i | e) = softmax over the batch of g(., e)
//   posterior          pi(e | o)   = softmax over experts of g(o, e) - log Z_e
//   log Z_e            = logsumexp over a set of observations of g(., e)

#include <cstdint>
#include <span>
#include <vector>

#include "dibm/autograd.hpp"
#include "dibm/mlp.hpp"
#include "dibm/rng.hpp"

namespace dibm {

struct GatingConfig {
  std::size_t obs_dim = 16;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t num_experts = 5;
  Activation activation = Activation::kGelu;

  bool operator==(const GatingConfig&) const = default;
};

class GatingNetwork {
 public:
  GatingNetwork() = default;
  GatingNetwork(const GatingConfig& cfg, Rng& rng);

  const GatingConfig& config() const noexcept { return cfg_; }
  std::size_t num_experts() const noexcept { return cfg_.num_experts; }

  // [B, D] -> [B, K]
  Var energies(Tape& tape, Var obs);
  Tensor energies(const Tensor& obs);

  std::vector<Parameter*> parameters();
  Mlp& mlp() { return mlp_; }

 private:
  GatingConfig cfg_;
  Mlp mlp_;
};

struct LogPartition {
  std::vector<float> log_z;  // per expert
  std::uint64_t samples = 0;

  bool operator==(const LogPartition&) const = default;
};

struct GatingTable {
  Tensor energies;           // [B, K]
  Tensor batch_conditional;  // columns sum to 1
  Tensor posterior;          // rows sum to 1
};

Tensor gating_energies(GatingNetwork& net, const Tensor& obs);
Tensor batch_conditional(const Tensor& energies);
// Without log_z the posterior is the plain row softmax of the energies.
Tensor posterior(const Tensor& energies, const LogPartition* log_z = nullptr);
GatingTable make_gating_table(const Tensor& energies, const LogPartition* log_z = nullptr);

LogPartition estimate_log_partition(GatingNetwork& net, const Tensor& obs);
LogPartition log_partition_from_energies(const Tensor& energies);

// S distinct indices drawn without replacement with probability proportional
// to `probs` (Gumbel-top-S on log probabilities).
std::vector<int> sample_assignments(std::span<const float> probs, std::size_t count, Rng& rng);

// Mean entropy (nats) of the batch-conditional columns.
double mean_column_entropy(const Tensor& conditional);

}  // namespace dibm
