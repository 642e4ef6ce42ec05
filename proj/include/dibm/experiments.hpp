#pragma once
// Multi-step workflows shared by the CLI and the acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

#include "dibm/checkpoint.hpp"
#include "dibm/eval.hpp"
#include "dibm/trainer.hpp"

namespace dibm {

struct RunResult {
  Policy policy;
  TrainLog log;
  std::string rng_state;
};

// Trains cfg.method from scratch; the stream is derived from cfg.seed.
RunResult train_run(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

// floor(ratio * N) pairs (at least one), chosen without replacement from a
// seeded stream and kept in dataset order.
Dataset subsample_dataset(const Dataset& data, double ratio, std::uint64_t seed);

// Continues training `pretrained` on a subsample of `data` using the
// pretrained normalization; the log partition is refit on that subsample.
RunResult finetune(const Policy& pretrained, const Dataset& data, double ratio,
                   const TrainConfig& cfg, const TrainOptions& opts = {});

// Fixed observation indices for comparing batch conditionals across runs.
std::vector<int> fixed_observation_sample(const Dataset& data, std::size_t n, std::uint64_t seed);
Tensor batch_conditional_on(Policy& policy, const Dataset& data, const std::vector<int>& idx);

}  // namespace dibm
