#pragma once
// Training configuration and its flat `key = value` text form.
//
// Lines are `key = value`; `#` starts a comment; blank lines are ignored.
// Unknown keys, malformed values and out-of-range settings raise ConfigError
// naming the offending field.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dibm/autograd.hpp"

namespace dibm {

struct TrainConfig {
  std::string method = "dibm";  // dibm | dp | vanilla_moe | taskwise_moe

  // Routing / assignment.
  std::size_t num_experts = 5;
  std::size_t samples_per_expert = 32;  // S
  std::size_t gating_batch = 128;       // B
  std::size_t expert_batch = 32;        // B'
  std::size_t buffer_capacity = 320;
  double beta = 3e-3;
  double gamma = 100.0;

  // Diffusion.
  int train_steps = 50;
  int inference_steps = 16;
  bool per_sample_k = true;

  // Optimization.
  double lr = 1e-3;
  double weight_decay = 1e-6;
  int epochs = 200;
  int iterations = 0;  // overrides epochs when > 0
  std::uint64_t seed = 0;
  int kl_every = 0;    // 0: once per epoch

  // Architecture.
  std::size_t width = 128;
  std::size_t cond_dim = 64;
  std::size_t num_blocks = 4;
  std::size_t moe_every = 4;
  std::size_t gating_hidden = 64;
  std::size_t gating_layers = 2;
  Activation activation = Activation::kGelu;

  // Inference.
  std::size_t log_partition_samples = 0;  // 0: the whole training set
  bool sample_expert = false;             // argmax otherwise

  // Baselines.
  std::size_t dp_batch = 128;
  double balance_weight = 0.01;
  std::vector<int> task_assignment = {0, 1, 2, 0, 3, 4};  // task id -> expert

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError on the first invalid field.
void validate(const TrainConfig& cfg);

// Number of optimizer iterations implied by epochs for a dataset of n pairs.
int resolve_iterations(const TrainConfig& cfg, std::size_t dataset_size);

TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
// Every field, one per line, in a fixed order; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& cfg);

// Single-field update by name (used by the parser and CLI overrides).
void set_field(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dibm
