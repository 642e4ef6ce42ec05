#pragma once
#include <filesystem>
#include <string>

#include "dibm/config.hpp"
#include "dibm/dataset.hpp"
#include "dibm/env.hpp"
#include "dibm/rng.hpp"
#include "dibm/tensor.hpp"

namespace testing {

inline std::filesystem::path tmp_dir(const std::string& name) {
  auto p = std::filesystem::path(DIBM_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline dibm::Tensor random_tensor(dibm::Shape shape, std::uint64_t seed, float scale = 1.0f) {
  dibm::Tensor t(std::move(shape));
  dibm::Rng rng(seed);
  rng.fill_normal(t.values());
  for (auto& v : t.values()) v *= scale;
  return t;
}

// Small suite dataset shared by several test files (generated once per process).
inline const dibm::Dataset& small_suite() {
  static const dibm::Dataset d = dibm::generate_dataset(dibm::env::build_suite(0), 3, 11);
  return d;
}

// Narrow networks so that training-loop tests run in milliseconds.
inline dibm::TrainConfig tiny_config(const std::string& method, std::size_t experts) {
  dibm::TrainConfig c;
  c.method = method;
  c.num_experts = experts;
  c.samples_per_expert = 4;
  c.gating_batch = 16;
  c.expert_batch = 6;
  c.buffer_capacity = 40;
  c.dp_batch = 16;
  c.width = 16;
  c.cond_dim = 8;
  c.num_blocks = 4;
  c.moe_every = 2;
  c.gating_hidden = 8;
  c.gating_layers = 2;
  c.train_steps = 10;
  c.inference_steps = 4;
  c.iterations = 10;
  c.task_assignment.assign(6, 0);
  for (std::size_t t = 0; t < 6; ++t) c.task_assignment[t] = static_cast<int>(t % experts);
  return c;
}

}  // namespace testing
