#include "dibm/model.hpp"

#include <cmath>

#include "dibm/errors.hpp"

namespace dibm {

ResidualBlock::ResidualBlock(const std::string& name, std::size_t width, std::size_t cond_dim,
                             Rng& rng)
    : fc1(name + ".fc1", width + cond_dim, width, rng), fc2(name + ".fc2", width, width, rng) {}

Var ResidualBlock::operator()(Tape& tape, Var x, Activation act) {
  return fc2(tape, ag::activation(fc1(tape, x), act));
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
  fc1.collect(out);
  fc2.collect(out);
}

Var SingleExpertRouter::route(Tape& tape, MoeLayer& layer, Var x, Var, Activation act,
                              std::size_t) {
  if (expert_ < 0 || static_cast<std::size_t>(expert_) >= layer.num_experts()) {
    throw ContractError("expert index " + std::to_string(expert_) + " out of range [0, " +
                        std::to_string(layer.num_experts()) + ")");
  }
  return layer.experts[static_cast<std::size_t>(expert_)](tape, x, act);
}

Var expert_on_rows(Tape& tape, ResidualBlock& expert, Var x, std::span<const int> rows,
                   std::size_t batch, Activation act) {
  Var sub = ag::gather_rows(x, rows);
  return ag::scatter_rows(expert(tape, sub, act), rows, batch);
}

Var PerSampleRouter::route(Tape& tape, MoeLayer& layer, Var x, Var, Activation act,
                           std::size_t) {
  const std::size_t batch = x.value().rows();
  if (experts_.size() != batch) throw DimensionError("per-sample routing: one expert per row");
  Var out;
  for (std::size_t e = 0; e < layer.num_experts(); ++e) {
    std::vector<int> rows;
    for (std::size_t r = 0; r < batch; ++r) {
      if (experts_[r] < 0 || static_cast<std::size_t>(experts_[r]) >= layer.num_experts()) {
        throw ContractError("expert index " + std::to_string(experts_[r]) + " out of range");
      }
      if (static_cast<std::size_t>(experts_[r]) == e) rows.push_back(static_cast<int>(r));
    }
    if (rows.empty()) continue;
    Var part = rows.size() == batch ? layer.experts[e](tape, x, act)
                                    : expert_on_rows(tape, layer.experts[e], x, rows, batch, act);
    out = out.valid() ? ag::add(out, part) : part;
  }
  return out;
}

NoisePredictor::NoisePredictor(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.num_experts < 1) throw ContractError("model needs at least one expert");
  in_proj_ = Linear("f.in", cfg.chunk_dim, cfg.width, rng);
  cond_proj_ = Linear("f.cond", cfg.obs_dim, cfg.cond_dim, rng);
  // Sinusoidal initialization of the learned step table.
  Tensor table({static_cast<std::size_t>(cfg.train_steps), cfg.width});
  const std::size_t half = cfg.width / 2;
  for (int k = 0; k < cfg.train_steps; ++k) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / std::max<std::size_t>(half, 1));
      table.at(static_cast<std::size_t>(k), i) = static_cast<float>(std::sin(k * freq));
      table.at(static_cast<std::size_t>(k), i + half) = static_cast<float>(std::cos(k * freq));
    }
  }
  time_table_ = Parameter("f.time_table", std::move(table));
  std::size_t shared_count = 0, moe_count = 0;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    if (is_moe_block(b)) {
      MoeLayer layer;
      for (std::size_t e = 0; e < cfg.num_experts; ++e) {
        layer.experts.emplace_back("f.moe" + std::to_string(moe_count) + ".expert" + std::to_string(e),
                                   cfg.width, cfg.cond_dim, rng);
      }
      moe_.push_back(std::move(layer));
      ++moe_count;
    } else {
      shared_.emplace_back("f.block" + std::to_string(shared_count), cfg.width, cfg.cond_dim, rng);
      ++shared_count;
    }
  }
  out_proj_ = Linear("f.out", cfg.width, cfg.chunk_dim, rng);
}

Var NoisePredictor::condition(Tape& tape, Var obs) {
  if (obs.value().cols() != cfg_.obs_dim) {
    throw DimensionError("observation width " + std::to_string(obs.value().cols()) +
                         " != model obs_dim " + std::to_string(cfg_.obs_dim));
  }
  return ag::activation(cond_proj_(tape, obs), cfg_.activation);
}

Var NoisePredictor::forward(Tape& tape, Var noisy, Var obs, std::span<const int> ks,
                            ExpertRouter& router) {
  const std::size_t batch = noisy.value().rows();
  if (noisy.value().cols() != cfg_.chunk_dim) {
    throw DimensionError("noisy chunk width " + std::to_string(noisy.value().cols()) +
                         " != " + std::to_string(cfg_.chunk_dim));
  }
  if (obs.value().rows() != batch || ks.size() != batch) {
    throw DimensionError("forward: batch sizes of chunk, observation and steps differ");
  }
  for (int k : ks) {
    if (k < 0 || k >= cfg_.train_steps) throw ContractError("diffusion step out of range");
  }
  Var cond = condition(tape, obs);
  Var t = ag::gather_rows(tape.param(time_table_), ks);
  Var h = ag::add(in_proj_(tape, noisy), t);
  std::size_t si = 0, mi = 0;
  for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
    Var x = ag::concat_cols(ag::add(h, t), cond);
    Var update;
    if (is_moe_block(b)) {
      update = router.route(tape, moe_[mi], x, cond, cfg_.activation, mi);
      ++mi;
    } else {
      update = shared_[si++](tape, x, cfg_.activation);
    }
    h = ag::add(h, update);
  }
  Var out = out_proj_(tape, h);
  require_finite(out.value(), "noise prediction");
  return out;
}

std::vector<Parameter*> NoisePredictor::shared_parameters() {
  std::vector<Parameter*> out;
  in_proj_.collect(out);
  cond_proj_.collect(out);
  out.push_back(&time_table_);
  for (auto& b : shared_) b.collect(out);
  out_proj_.collect(out);
  return out;
}

std::vector<Parameter*> NoisePredictor::expert_parameters(int expert) {
  std::vector<Parameter*> out;
  for (auto& layer : moe_) layer.experts.at(static_cast<std::size_t>(expert)).collect(out);
  return out;
}

std::vector<Parameter*> NoisePredictor::parameters() {
  std::vector<Parameter*> out = shared_parameters();
  for (std::size_t e = 0; e < cfg_.num_experts; ++e) {
    auto ep = expert_parameters(static_cast<int>(e));
    out.insert(out.end(), ep.begin(), ep.end());
  }
  return out;
}

Tensor predict_noise(NoisePredictor& model, const Tensor& noisy, const Tensor& obs,
                     std::span<const int> ks, int expert) {
  Tape tape;
  tape.set_grad_enabled(false);
  SingleExpertRouter router(expert);
  return model.forward(tape, tape.constant(noisy), tape.constant(obs), ks, router).value();
}

Var diffusion_loss(Tape& tape, NoisePredictor& model, const DiffusionBatch& batch,
                   const NoiseSchedule& sched, ExpertRouter& router) {
  if (batch.obs.rows() == 0) throw ContractError("diffusion_loss: empty batch");
  Tensor noisy = add_noise_rows(batch.chunks, batch.noise, batch.ks, sched);
  Var pred = model.forward(tape, tape.constant(std::move(noisy)), tape.constant(batch.obs),
                           batch.ks, router);
  return ag::mean(ag::mse_rows(pred, tape.constant(batch.noise)));
}

Tensor diffusion_mse_rows(NoisePredictor& model, const DiffusionBatch& batch,
                          const NoiseSchedule& sched, int expert) {
  if (batch.obs.rows() == 0) throw ContractError("diffusion_loss: empty batch");
  Tape tape;
  tape.set_grad_enabled(false);
  SingleExpertRouter router(expert);
  Tensor noisy = add_noise_rows(batch.chunks, batch.noise, batch.ks, sched);
  Var pred = model.forward(tape, tape.constant(std::move(noisy)), tape.constant(batch.obs),
                           batch.ks, router);
  return ag::mse_rows(pred, tape.constant(batch.noise)).value();
}

DiffusionBatch make_diffusion_batch(Tensor obs, Tensor chunks, const NoiseSchedule& sched,
                                    bool per_sample_k, Rng& rng) {
  DiffusionBatch b;
  const std::size_t n = chunks.rows();
  b.ks.resize(n);
  if (per_sample_k) {
    for (auto& k : b.ks) k = static_cast<int>(rng.index(static_cast<std::size_t>(sched.steps)));
  } else {
    const int k = static_cast<int>(rng.index(static_cast<std::size_t>(sched.steps)));
    for (auto& kk : b.ks) kk = k;
  }
  b.noise = Tensor(chunks.shape());
  rng.fill_normal(b.noise.values());
  b.obs = std::move(obs);
  b.chunks = std::move(chunks);
  return b;
}

}  // namespace dibm
