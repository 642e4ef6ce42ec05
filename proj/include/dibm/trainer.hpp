#pragma once
// Joint training of the noise predictor and the gating network.
//
// One iteration:
//   o_B ~ uniform over the dataset (B pairs)
//   for each expert e:
//     pi(o_B|e) = column softmax of g(o_B, e)
//     S indices ~ pi(o_B|e) without replacement, appended to buffer e
//     B' indices drawn from buffer e; expert term = MSE of expert e on them
//   MSE~[i, e] = per-row MSE of expert e on o_B (no gradient)
//   loss = sum_e expert_e
//        + gamma * sum_e sum_i pi(o_i|e) (MSE~[i,e] - beta log pi~(e|o_i) + beta log pi(o_i|e))
// with pi~(e|o_i) the batch posterior under stop-gradient. One AdamW step on
// all parameters.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include "dibm/dataset.hpp"
#include "dibm/optim.hpp"
#include "dibm/policy.hpp"

namespace dibm {

/// FIFO ring of dataset indices assigned to one expert.
class ExpertBuffer {
 public:
  explicit ExpertBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(std::span<const int> indices);
  // Uniform draw without replacement; with replacement while fewer than
  // `count` entries are stored (`*warmup` is set then).
  std::vector<int> draw(std::size_t count, Rng& rng, bool* warmup = nullptr) const;

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::deque<int>& items() const noexcept { return items_; }

 private:
  std::size_t capacity_;
  std::deque<int> items_;
};

struct LossBreakdown {
  int iteration = 0;
  double expert_term = 0.0;
  double gating_mse = 0.0;
  double gating_repulsion = 0.0;  // sum pi(o|e) * (-beta log pi~(e|o))
  double gating_entropy = 0.0;    // sum pi(o|e) * (beta log pi(o|e))
  double balance = 0.0;           // vanilla MoE only
  double total = 0.0;
  double kl = std::numeric_limits<double>::quiet_NaN();
  bool warmup = false;
  std::vector<std::size_t> buffer_fill;
};

// Inputs of one evaluation of the joint loss, all random draws fixed.
struct JointBatch {
  Tensor gating_obs;                          // [B, D]
  std::vector<int> gating_indices;            // dataset rows of o_B
  std::vector<std::vector<int>> assigned;     // per expert, the S rows pushed to its buffer
  std::vector<DiffusionBatch> gating_batches;  // per expert, rows = o_B
  std::vector<DiffusionBatch> expert_batches;  // per expert, B' rows
  std::vector<std::vector<int>> expert_indices;
};

// Gating term (without gamma) from live energies and detached per-row MSE.
// Writes the three parts into `out` when given.
Var gating_objective(Tape& tape, Var energies, const Tensor& detached_mse, double beta,
                     LossBreakdown* out = nullptr);

// Per-row MSE of every expert over the gating batch: [B, K], no gradients.
Tensor detached_mse_table(NoisePredictor& model, const JointBatch& batch,
                          const NoiseSchedule& sched);

// Records the full joint loss on `tape`; fills the breakdown.
Var joint_loss(Tape& tape, NoisePredictor& model, GatingNetwork& gating, const JointBatch& batch,
               const NoiseSchedule& sched, double beta, double gamma, LossBreakdown* out);

// KL(p || pi) between the uniform distribution over the given observations and
// the uniform mixture of per-expert energy models, clamped at 0.
double kl_diagnostic(GatingNetwork& net, const Tensor& obs, const LogPartition& log_z);
double kl_from_energies(const Tensor& energies, const LogPartition& log_z);

class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual LossBreakdown train_iteration(Rng& rng) = 0;
  virtual AdamW& optimizer() = 0;
};

class DibmTrainer final : public Trainer {
 public:
  DibmTrainer(Policy& policy, const Dataset& data);

  LossBreakdown train_iteration(Rng& rng) override;
  AdamW& optimizer() override { return opt_; }
  const std::vector<ExpertBuffer>& buffers() const { return buffers_; }

  // When on, the most recent iteration's draws are kept in last_batch().
  void set_recording(bool on) { record_ = on; }
  const JointBatch& last_batch() const { return last_; }

  // Draws every random quantity of one iteration and updates the buffers.
  JointBatch sample_batch(Rng& rng, bool* warmup);

 private:
  Policy& policy_;
  const Dataset& data_;
  AdamW opt_;
  std::vector<ExpertBuffer> buffers_;
  bool record_ = false;
  JointBatch last_;
};

// One plain diffusion-policy update on a prepared batch (expert 0).
double plain_dp_step(NoisePredictor& model, AdamW& opt, const DiffusionBatch& batch,
                     const NoiseSchedule& sched);

// Uniform minibatches; one expert, a fixed task table, or per-layer gates.
class UniformBatchTrainer final : public Trainer {
 public:
  UniformBatchTrainer(Policy& policy, const Dataset& data);

  LossBreakdown train_iteration(Rng& rng) override;
  AdamW& optimizer() override { return opt_; }

 private:
  Policy& policy_;
  const Dataset& data_;
  AdamW opt_;
};

std::unique_ptr<Trainer> make_trainer(Policy& policy, const Dataset& data);

// Indices of a uniform minibatch: without replacement when n >= count.
std::vector<int> uniform_batch(std::size_t n, std::size_t count, Rng& rng);

struct TrainLog {
  std::vector<LossBreakdown> rows;
};

struct TrainOptions {
  int iterations = -1;  // < 0: resolve from the config
  std::function<void(const LossBreakdown&)> on_iteration;
};

// Runs the configured method to completion, then estimates the policy's log
// partition on the training observations.
TrainLog train_policy(Policy& policy, const Dataset& data, Rng& rng, const TrainOptions& opts = {});

// Log partition over the whole dataset, or a seeded subsample of `samples` rows.
LogPartition fit_log_partition(Policy& policy, const Dataset& data, std::size_t samples,
                               Rng& rng);

void write_loss_csv_header(std::ostream& os, std::size_t num_experts);
void write_loss_csv_row(std::ostream& os, const std::string& method, const LossBreakdown& row,
                        std::size_t num_experts);
void save_loss_csv(const std::filesystem::path& path, const std::string& method,
                   const TrainLog& log, std::size_t num_experts);

}  // namespace dibm
