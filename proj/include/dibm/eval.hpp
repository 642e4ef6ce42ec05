#pragma once
// Inference, closed-loop evaluation, traces and report export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dibm/env.hpp"
#include "dibm/policy.hpp"

namespace dibm {

enum class SelectMode { kArgmax, kSample };

struct InferenceResult {
  Tensor chunks;                 // [n, H*A] in environment units
  std::vector<int> experts;      // selected expert per row (first MoE layer for vanilla gates)
  Tensor posterior;              // [n, K]
};

// One chunk per observation row; row r draws its initial noise and (in sample
// mode) its expert from rngs[r].
InferenceResult infer_actions(Policy& policy, const Tensor& obs, SelectMode mode,
                              std::vector<Rng>& rngs, int force_expert = -1);
// Single observation; returns [H*A] raw actions.
std::vector<float> infer_action(Policy& policy, std::span<const float> obs, SelectMode mode,
                                Rng& rng, int force_expert = -1, int* expert = nullptr);

struct TraceStep {
  int timestep = 0;
  int phase = 0;
  int expert = 0;
  std::vector<float> posterior;
  std::vector<float> observation;
};

struct EpisodeTrace {
  int task_id = 0;
  int episode = 0;
  std::uint64_t episode_seed = 0;
  int length = 0;
  int cap = 0;
  bool success = false;
  std::vector<TraceStep> steps;  // one per decision
};

// Chunk source for rollouts: given the active states, one H*A chunk per state.
struct ChunkDecision {
  std::vector<std::vector<float>> chunks;
  std::vector<int> experts;
  std::vector<std::vector<float>> posteriors;
};
using ChunkPolicy = std::function<ChunkDecision(const std::vector<env::EnvState>& states,
                                                const std::vector<int>& trial_ids)>;

struct RolloutOptions {
  SelectMode mode = SelectMode::kArgmax;
  int force_expert = -1;
  std::uint64_t seed = 0;
  int cadence = static_cast<int>(env::kExecHorizon);
  int cap_factor = 4;
};

// Evaluation episode seeds are disjoint from training seeds.
std::uint64_t eval_episode_seed(std::uint64_t seed, int task_id, int trial);

std::vector<EpisodeTrace> rollout(const ChunkPolicy& policy, const env::TaskSpec& task,
                                  int n_trials, const RolloutOptions& opts, std::size_t num_experts);
std::vector<EpisodeTrace> rollout(Policy& policy, const env::TaskSpec& task, int n_trials,
                                  const RolloutOptions& opts);
// The scripted demonstrator as a chunk source (harness sanity check).
ChunkPolicy demonstrator_policy();

struct TaskResult {
  int task_id = 0;
  std::string name;
  int trials = 0;
  int successes = 0;
  double rate = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<TaskResult> tasks;
  double total = 0.0;
  std::vector<double> forced_expert_total;  // mean success with expert e forced
  // usage[task_id][phase][expert] = decision count
  std::map<int, std::vector<std::vector<int>>> usage;
};

struct EvalOptions {
  int trials = 10;
  SelectMode mode = SelectMode::kArgmax;
  bool forced_experts = false;
  std::uint64_t seed = 0;
};

EvalReport evaluate(Policy& policy, const std::vector<env::TaskSpec>& tasks, const EvalOptions& opts,
                    std::vector<EpisodeTrace>* traces = nullptr);
double mean_success(const std::vector<EpisodeTrace>& traces);

std::string report_json(const EvalReport& report);
void save_report(const EvalReport& report, const std::filesystem::path& path);

void export_traces(const std::vector<EpisodeTrace>& traces, std::size_t num_experts,
                   const std::filesystem::path& path);

struct SweepEntry {
  double beta = 0.0;
  Tensor conditional;  // [N, K] batch conditional over a fixed observation sample
};
void export_sweep(const std::vector<SweepEntry>& entries, const std::filesystem::path& path);

// Success of one fine-tuning run at one data ratio.
struct RatioPoint {
  std::string method;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  double success = 0.0;
};
void export_ratio_curve(const std::vector<RatioPoint>& points, const std::filesystem::path& path);

// Per-observation conditioning features and routed expert, for external projection.
void export_embeddings(Policy& policy, const Dataset& data, const std::filesystem::path& path);

}  // namespace dibm
