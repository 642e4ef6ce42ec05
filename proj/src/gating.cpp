#include "dibm/gating.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dibm/errors.hpp"

namespace dibm {

GatingNetwork::GatingNetwork(const GatingConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.num_experts < 1) throw ContractError("gating needs at least one expert");
  std::vector<std::size_t> widths{cfg.obs_dim};
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) widths.push_back(cfg.hidden);
  widths.push_back(cfg.num_experts);
  mlp_ = Mlp("g", widths, cfg.activation, rng);
}

Var GatingNetwork::energies(Tape& tape, Var obs) {
  if (obs.value().cols() != cfg_.obs_dim) {
    throw ContractError("gating: observation width " + std::to_string(obs.value().cols()) +
                        " != " + std::to_string(cfg_.obs_dim));
  }
  return mlp_.forward(tape, obs);
}

Tensor GatingNetwork::energies(const Tensor& obs) {
  Tape tape;
  tape.set_grad_enabled(false);
  return energies(tape, tape.constant(obs)).value();
}

std::vector<Parameter*> GatingNetwork::parameters() {
  std::vector<Parameter*> out;
  mlp_.collect(out);
  return out;
}

Tensor gating_energies(GatingNetwork& net, const Tensor& obs) { return net.energies(obs); }

Tensor batch_conditional(const Tensor& energies) { return softmax_values(energies, 0); }

Tensor posterior(const Tensor& energies, const LogPartition* log_z) {
  if (!log_z) return softmax_values(energies, 1);
  const std::size_t k = energies.cols();
  if (log_z->log_z.size() != k) {
    throw ContractError("posterior: log partition has " + std::to_string(log_z->log_z.size()) +
                        " entries for " + std::to_string(k) + " experts");
  }
  Tensor logits = energies;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    for (std::size_t e = 0; e < k; ++e) logits.at(r, e) -= log_z->log_z[e];
  }
  return softmax_values(logits, 1);
}

GatingTable make_gating_table(const Tensor& energies, const LogPartition* log_z) {
  return {energies, batch_conditional(energies), posterior(energies, log_z)};
}

LogPartition log_partition_from_energies(const Tensor& energies) {
  const std::size_t n = energies.rows(), k = energies.cols();
  if (n == 0) throw ContractError("log partition needs at least one observation");
  LogPartition lp;
  lp.samples = n;
  lp.log_z.resize(k);
  std::vector<float> lane(n);
  for (std::size_t e = 0; e < k; ++e) {
    for (std::size_t i = 0; i < n; ++i) lane[i] = energies.at(i, e);
    lp.log_z[e] = logsumexp(lane);
  }
  return lp;
}

LogPartition estimate_log_partition(GatingNetwork& net, const Tensor& obs) {
  if (obs.rows() == 0 || obs.empty()) throw ContractError("log partition needs at least one observation");
  return log_partition_from_energies(net.energies(obs));
}

std::vector<int> sample_assignments(std::span<const float> probs, std::size_t count, Rng& rng) {
  if (count > probs.size()) {
    throw ContractError("cannot draw " + std::to_string(count) + " distinct indices from " +
                        std::to_string(probs.size()));
  }
  std::vector<double> keys(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double g = rng.gumbel();
    keys[i] = probs[i] > 0.0f ? std::log(static_cast<double>(probs[i])) + g
                              : -std::numeric_limits<double>::infinity();
  }
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](int a, int b) { return keys[a] > keys[b] || (keys[a] == keys[b] && a < b); });
  order.resize(count);
  return order;
}

double mean_column_entropy(const Tensor& conditional) {
  const std::size_t n = conditional.rows(), k = conditional.cols();
  if (k == 0) return 0.0;
  double total = 0.0;
  for (std::size_t e = 0; e < k; ++e) {
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = conditional.at(i, e);
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(k);
}

}  // namespace dibm
