#pragma once
// Expert-indexed noise-prediction network.
//
//   cond = act(W_c o)                      observation features, [B, C]
//   t    = table[k]                        learned step embedding, [B, W]
//   h    = W_in a^k + t
//   block: h += fc2(act(fc1([h + t, cond])))
//   eps  = W_out h
//
// Every `moe_every`-th block (1-based) is a MoE layer holding K copies of the
// block; a forward pass asks an ExpertRouter which copy handles which rows.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dibm/autograd.hpp"
#include "dibm/mlp.hpp"
#include "dibm/rng.hpp"
#include "dibm/schedule.hpp"

namespace dibm {

struct ModelConfig {
  std::size_t obs_dim = 16;
  std::size_t chunk_dim = 24;  // H * A
  std::size_t width = 128;
  std::size_t cond_dim = 64;
  std::size_t num_blocks = 4;
  std::size_t moe_every = 4;  // one in four blocks is a MoE layer
  std::size_t num_experts = 5;
  int train_steps = 50;
  Activation activation = Activation::kGelu;

  bool operator==(const ModelConfig&) const = default;
};

struct ResidualBlock {
  Linear fc1;
  Linear fc2;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t width, std::size_t cond_dim, Rng& rng);
  // Residual update for conditioned input x = [h + t, cond].
  Var operator()(Tape& tape, Var x, Activation act);
  void collect(std::vector<Parameter*>& out);
};

/// K experts with identical shapes; only the selected expert's parameters are read.
struct MoeLayer {
  std::vector<ResidualBlock> experts;
  std::size_t num_experts() const { return experts.size(); }
};

class ExpertRouter {
 public:
  virtual ~ExpertRouter() = default;
  // x: conditioned block input [B, W + C]; cond: observation features [B, C].
  virtual Var route(Tape& tape, MoeLayer& layer, Var x, Var cond, Activation act,
                    std::size_t moe_index) = 0;
};

// Whole batch to one expert.
class SingleExpertRouter final : public ExpertRouter {
 public:
  explicit SingleExpertRouter(int expert) : expert_(expert) {}
  Var route(Tape& tape, MoeLayer& layer, Var x, Var cond, Activation act,
            std::size_t moe_index) override;

 private:
  int expert_;
};

// Row r to expert experts[r] (no gate scaling).
class PerSampleRouter final : public ExpertRouter {
 public:
  explicit PerSampleRouter(std::vector<int> experts) : experts_(std::move(experts)) {}
  Var route(Tape& tape, MoeLayer& layer, Var x, Var cond, Activation act,
            std::size_t moe_index) override;

 private:
  std::vector<int> experts_;
};

// Evaluates `expert` on the rows `rows` of x and scatters the result back into [B, W].
Var expert_on_rows(Tape& tape, ResidualBlock& expert, Var x, std::span<const int> rows,
                   std::size_t batch, Activation act);

class NoisePredictor {
 public:
  NoisePredictor() = default;
  NoisePredictor(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t num_experts() const noexcept { return cfg_.num_experts; }

  // noisy: [B, H*A], obs: [B, D], ks: B step indices.
  Var forward(Tape& tape, Var noisy, Var obs, std::span<const int> ks, ExpertRouter& router);
  Var condition(Tape& tape, Var obs);

  // Parameters in a fixed order with stable names.
  std::vector<Parameter*> parameters();
  // Parameters of one expert sub-block across all MoE layers.
  std::vector<Parameter*> expert_parameters(int expert);
  std::vector<Parameter*> shared_parameters();

  std::vector<MoeLayer>& moe_layers() { return moe_; }

 private:
  bool is_moe_block(std::size_t b) const {
    return cfg_.moe_every > 0 && (b + 1) % cfg_.moe_every == 0;
  }

  ModelConfig cfg_;
  Linear in_proj_;
  Linear cond_proj_;
  Parameter time_table_;
  std::vector<ResidualBlock> shared_;  // indexed by shared-block ordinal
  std::vector<MoeLayer> moe_;          // indexed by MoE ordinal
  Linear out_proj_;
};

// Predicted noise for a batch routed entirely to `expert` (no gradients recorded).
Tensor predict_noise(NoisePredictor& model, const Tensor& noisy, const Tensor& obs,
                     std::span<const int> ks, int expert);

struct DiffusionBatch {
  Tensor obs;     // [B, D]
  Tensor chunks;  // [B, H*A] normalized
  std::vector<int> ks;
  Tensor noise;   // [B, H*A]
};

// Mean squared error between sampled and predicted noise over batch and chunk entries.
Var diffusion_loss(Tape& tape, NoisePredictor& model, const DiffusionBatch& batch,
                   const NoiseSchedule& sched, ExpertRouter& router);
// Same loss without gradients, returning per-row MSE [B,1].
Tensor diffusion_mse_rows(NoisePredictor& model, const DiffusionBatch& batch,
                          const NoiseSchedule& sched, int expert);

// Draws per-row steps (or one shared step when per_sample is false) and unit noise.
DiffusionBatch make_diffusion_batch(Tensor obs, Tensor chunks, const NoiseSchedule& sched,
                                    bool per_sample_k, Rng& rng);

}  // namespace dibm
