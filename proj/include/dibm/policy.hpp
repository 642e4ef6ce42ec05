#pragma once
// Everything a trained behavior model needs at inference time.

#include <vector>

#include "dibm/baselines.hpp"
#include "dibm/config.hpp"
#include "dibm/dataset.hpp"
#include "dibm/gating.hpp"
#include "dibm/model.hpp"
#include "dibm/schedule.hpp"

namespace dibm {

struct Policy {
  TrainConfig cfg;
  std::size_t obs_dim = 0;
  std::size_t horizon = 0;
  std::size_t action_dim = 0;

  NoisePredictor model;
  GatingNetwork gating;
  std::vector<Linear> gates;  // vanilla MoE: one per MoE layer
  TaskAssignment assignment;  // task-wise MoE
  NormStats stats;
  LogPartition log_z;
  NoiseSchedule schedule;
  InferenceSchedule inference;

  // Parameters the method trains, in a fixed order.
  std::vector<Parameter*> trainable();
  // Every stored tensor (model, gating and gates), in a fixed order.
  std::vector<Parameter*> all_parameters();
};

ModelConfig model_config(const TrainConfig& cfg, std::size_t obs_dim, std::size_t chunk_dim);
GatingConfig gating_config(const TrainConfig& cfg, std::size_t obs_dim);

// Fresh parameters drawn from a stream derived from cfg.seed.
Policy make_policy(const TrainConfig& cfg, std::size_t obs_dim, std::size_t horizon,
                   std::size_t action_dim);
Policy make_policy(const TrainConfig& cfg, const Dataset& data);

// Expert of every row under the policy's routing rule (posterior argmax or
// task table; 0 for single-expert and vanilla policies).
std::vector<int> route_batch(Policy& policy, const Tensor& obs);

}  // namespace dibm
