#include "dibm/policy.hpp"

#include <algorithm>

#include "dibm/errors.hpp"

namespace dibm {

ModelConfig model_config(const TrainConfig& cfg, std::size_t obs_dim, std::size_t chunk_dim) {
  ModelConfig m;
  m.obs_dim = obs_dim;
  m.chunk_dim = chunk_dim;
  m.width = cfg.width;
  m.cond_dim = cfg.cond_dim;
  m.num_blocks = cfg.num_blocks;
  m.moe_every = cfg.moe_every;
  m.num_experts = cfg.num_experts;
  m.train_steps = cfg.train_steps;
  m.activation = cfg.activation;
  return m;
}

GatingConfig gating_config(const TrainConfig& cfg, std::size_t obs_dim) {
  GatingConfig g;
  g.obs_dim = obs_dim;
  g.hidden = cfg.gating_hidden;
  g.hidden_layers = cfg.gating_layers;
  g.num_experts = cfg.num_experts;
  g.activation = cfg.activation;
  return g;
}

Policy make_policy(const TrainConfig& cfg, std::size_t obs_dim, std::size_t horizon,
                   std::size_t action_dim) {
  validate(cfg);
  Policy p;
  p.cfg = cfg;
  p.obs_dim = obs_dim;
  p.horizon = horizon;
  p.action_dim = action_dim;
  Rng model_rng(mix_seed(cfg.seed, 0x6d6f64656cULL));
  p.model = NoisePredictor(model_config(cfg, obs_dim, horizon * action_dim), model_rng);
  Rng gate_rng(mix_seed(cfg.seed, 0x676174696eULL));
  p.gating = GatingNetwork(gating_config(cfg, obs_dim), gate_rng);
  for (std::size_t i = 0; i < p.model.moe_layers().size(); ++i) {
    p.gates.emplace_back("v.gate" + std::to_string(i), cfg.cond_dim, cfg.num_experts, gate_rng);
  }
  p.assignment = TaskAssignment::from_vector(cfg.task_assignment);
  p.schedule = make_schedule(cfg.train_steps);
  p.inference = make_inference_schedule(p.schedule, cfg.inference_steps);
  p.log_z.log_z.assign(cfg.num_experts, 0.0f);
  return p;
}

Policy make_policy(const TrainConfig& cfg, const Dataset& data) {
  Policy p = make_policy(cfg, data.obs_dim(), data.horizon(), data.action_dim());
  p.stats = data.stats();
  return p;
}

std::vector<Parameter*> Policy::trainable() {
  std::vector<Parameter*> out = model.parameters();
  if (cfg.method == "dibm") {
    auto g = gating.parameters();
    out.insert(out.end(), g.begin(), g.end());
  } else if (cfg.method == "vanilla_moe") {
    for (auto& gate : gates) gate.collect(out);
  }
  return out;
}

std::vector<Parameter*> Policy::all_parameters() {
  std::vector<Parameter*> out = model.parameters();
  auto g = gating.parameters();
  out.insert(out.end(), g.begin(), g.end());
  for (auto& gate : gates) gate.collect(out);
  return out;
}

std::vector<int> route_batch(Policy& policy, const Tensor& obs) {
  const std::size_t n = obs.rows();
  if (policy.cfg.method == "taskwise_moe") return taskwise_route_batch(policy.assignment, obs);
  if (policy.cfg.method != "dibm" || policy.cfg.num_experts == 1) return std::vector<int>(n, 0);
  Tensor post = posterior(policy.gating.energies(obs), &policy.log_z);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = post.row_span(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace dibm
