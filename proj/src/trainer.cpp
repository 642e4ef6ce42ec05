#include "dibm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dibm/errors.hpp"

namespace dibm {

void ExpertBuffer::push(std::span<const int> indices) {
  for (int i : indices) {
    items_.push_back(i);
    if (items_.size() > capacity_) items_.pop_front();
  }
}

std::vector<int> ExpertBuffer::draw(std::size_t count, Rng& rng, bool* warmup) const {
  if (items_.empty()) throw ContractError("draw from an empty expert buffer");
  std::vector<int> out;
  out.reserve(count);
  if (items_.size() < count) {
    if (warmup) *warmup = true;
    for (std::size_t i = 0; i < count; ++i) out.push_back(items_[rng.index(items_.size())]);
    return out;
  }
  // Partial Fisher-Yates over positions.
  std::vector<int> pos(items_.size());
  std::iota(pos.begin(), pos.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(pos.size() - i);
    std::swap(pos[i], pos[j]);
    out.push_back(items_[static_cast<std::size_t>(pos[i])]);
  }
  return out;
}

std::vector<int> uniform_batch(std::size_t n, std::size_t count, Rng& rng) {
  if (n == 0) throw ContractError("cannot draw a batch from an empty dataset");
  std::vector<int> out;
  out.reserve(count);
  if (n < count) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<int>(rng.index(n)));
    return out;
  }
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(pos[i], pos[j]);
    out.push_back(pos[i]);
  }
  return out;
}

Var gating_objective(Tape& tape, Var energies, const Tensor& detached_mse, double beta,
                     LossBreakdown* out) {
  const Tensor& ev = energies.value();
  if (!detached_mse.same_shape(ev)) {
    throw DimensionError("detached MSE table " + shape_str(detached_mse.shape()) +
                         " does not match energies " + shape_str(ev.shape()));
  }
  Var log_cond = ag::log_softmax(energies, 0);
  Var cond = ag::exp(log_cond);
  // Batch posterior from the conditional with the batch log-partition; no gradient.
  const Tensor log_post = log_softmax_values(log_cond.value(), 1);
  Tensor fixed(ev.shape());
  const float b = static_cast<float>(beta);
  for (std::size_t i = 0; i < fixed.numel(); ++i) fixed[i] = detached_mse[i] - b * log_post[i];
  Var inner = ag::add(tape.constant(std::move(fixed)), ag::scale(log_cond, b));
  Var term = ag::sum(ag::mul(cond, inner));
  if (out) {
    double mse = 0.0, rep = 0.0, ent = 0.0;
    const Tensor& c = cond.value();
    const Tensor& lc = log_cond.value();
    for (std::size_t i = 0; i < c.numel(); ++i) {
      mse += static_cast<double>(c[i]) * detached_mse[i];
      rep += static_cast<double>(c[i]) * (-beta * log_post[i]);
      ent += static_cast<double>(c[i]) * (beta * lc[i]);
    }
    out->gating_mse = mse;
    out->gating_repulsion = rep;
    out->gating_entropy = ent;
  }
  return term;
}

Tensor detached_mse_table(NoisePredictor& model, const JointBatch& batch,
                          const NoiseSchedule& sched) {
  const std::size_t k = model.num_experts();
  if (batch.gating_batches.size() != k) throw DimensionError("one gating batch per expert expected");
  const std::size_t b = batch.gating_obs.rows();
  Tensor table({b, k});
  for (std::size_t e = 0; e < k; ++e) {
    Tensor rows = diffusion_mse_rows(model, batch.gating_batches[e], sched, static_cast<int>(e));
    for (std::size_t i = 0; i < b; ++i) table.at(i, e) = rows[i];
  }
  return table;
}

Var joint_loss(Tape& tape, NoisePredictor& model, GatingNetwork& gating, const JointBatch& batch,
               const NoiseSchedule& sched, double beta, double gamma, LossBreakdown* out) {
  const std::size_t k = model.num_experts();
  if (batch.expert_batches.size() != k || gating.num_experts() != k) {
    throw DimensionError("expert count differs between model, gating and batch");
  }
  Var experts;
  for (std::size_t e = 0; e < k; ++e) {
    SingleExpertRouter router(static_cast<int>(e));
    Var l = diffusion_loss(tape, model, batch.expert_batches[e], sched, router);
    experts = experts.valid() ? ag::add(experts, l) : l;
  }
  Tensor mse = detached_mse_table(model, batch, sched);
  Var energies = gating.energies(tape, tape.constant(batch.gating_obs));
  LossBreakdown local;
  LossBreakdown* lb = out ? out : &local;
  Var g = gating_objective(tape, energies, mse, beta, lb);
  Var total = ag::add(experts, ag::scale(g, static_cast<float>(gamma)));
  lb->expert_term = experts.value().item();
  lb->total = total.value().item();
  return total;
}

double kl_from_energies(const Tensor& energies, const LogPartition& log_z) {
  const std::size_t n = energies.rows(), k = energies.cols();
  if (n == 0) throw ContractError("KL diagnostic needs at least one observation");
  if (log_z.log_z.size() != k) throw DimensionError("log partition length differs from expert count");
  double acc = 0.0;
  std::vector<double> lane(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < k; ++e) {
      lane[e] = static_cast<double>(energies.at(i, e)) - log_z.log_z[e];
      mx = std::max(mx, lane[e]);
    }
    double s = 0.0;
    for (double v : lane) s += std::exp(v - mx);
    acc += mx + std::log(s) - std::log(static_cast<double>(k));
  }
  const double kl = -std::log(static_cast<double>(n)) - acc / static_cast<double>(n);
  return std::max(kl, 0.0);
}

double kl_diagnostic(GatingNetwork& net, const Tensor& obs, const LogPartition& log_z) {
  return kl_from_energies(net.energies(obs), log_z);
}

DibmTrainer::DibmTrainer(Policy& policy, const Dataset& data) : policy_(policy), data_(data) {
  if (data.empty()) throw ContractError("training needs a non-empty dataset");
  if (data.obs_dim() != policy.obs_dim || data.chunk_size() != policy.horizon * policy.action_dim) {
    throw DimensionError("dataset shapes do not match the policy");
  }
  const TrainConfig& c = policy.cfg;
  opt_ = AdamW(policy.trainable(), AdamWOptions{static_cast<float>(c.lr),
                                                static_cast<float>(c.weight_decay)});
  buffers_.assign(c.num_experts, ExpertBuffer(c.buffer_capacity));
}

JointBatch DibmTrainer::sample_batch(Rng& rng, bool* warmup) {
  const TrainConfig& c = policy_.cfg;
  const std::size_t k = c.num_experts;
  JointBatch jb;
  std::vector<int> idx = uniform_batch(data_.size(), c.gating_batch, rng);
  jb.gating_obs = data_.gather_observations(idx);
  const Tensor cond = batch_conditional(policy_.gating.energies(jb.gating_obs));
  std::vector<float> column(idx.size());
  for (std::size_t e = 0; e < k; ++e) {
    for (std::size_t i = 0; i < idx.size(); ++i) column[i] = cond.at(i, e);
    std::vector<int> picks = sample_assignments(column, c.samples_per_expert, rng);
    for (int& p : picks) p = idx[static_cast<std::size_t>(p)];
    buffers_[e].push(picks);
    jb.assigned.push_back(picks);
    std::vector<int> drawn = buffers_[e].draw(c.expert_batch, rng, warmup);
    jb.expert_batches.push_back(make_diffusion_batch(data_.gather_observations(drawn),
                                                     data_.gather_normalized_chunks(drawn),
                                                     policy_.schedule, c.per_sample_k, rng));
    jb.expert_indices.push_back(std::move(drawn));
  }
  // Common draws for the no-gradient pass over o_B; with a single k per
  // iteration each expert reuses its own k.
  DiffusionBatch shared = make_diffusion_batch(jb.gating_obs, data_.gather_normalized_chunks(idx),
                                               policy_.schedule, c.per_sample_k, rng);
  jb.gating_indices = std::move(idx);
  for (std::size_t e = 0; e < k; ++e) {
    DiffusionBatch b = shared;
    if (!c.per_sample_k) std::fill(b.ks.begin(), b.ks.end(), jb.expert_batches[e].ks.front());
    jb.gating_batches.push_back(std::move(b));
  }
  return jb;
}

LossBreakdown DibmTrainer::train_iteration(Rng& rng) {
  bool warm = false;
  JointBatch jb = sample_batch(rng, &warm);
  opt_.zero_grad();
  LossBreakdown lb;
  {
    Tape tape;
    Var loss = joint_loss(tape, policy_.model, policy_.gating, jb, policy_.schedule,
                          policy_.cfg.beta, policy_.cfg.gamma, &lb);
    tape.backward(loss);
  }
  opt_.step();
  lb.warmup = warm;
  for (const auto& b : buffers_) lb.buffer_fill.push_back(b.size());
  if (record_) last_ = std::move(jb);
  return lb;
}

double plain_dp_step(NoisePredictor& model, AdamW& opt, const DiffusionBatch& batch,
                     const NoiseSchedule& sched) {
  opt.zero_grad();
  double value = 0.0;
  {
    Tape tape;
    SingleExpertRouter router(0);
    Var loss = diffusion_loss(tape, model, batch, sched, router);
    value = loss.value().item();
    tape.backward(loss);
  }
  opt.step();
  return value;
}

UniformBatchTrainer::UniformBatchTrainer(Policy& policy, const Dataset& data)
    : policy_(policy), data_(data) {
  if (data.empty()) throw ContractError("training needs a non-empty dataset");
  const TrainConfig& c = policy.cfg;
  opt_ = AdamW(policy.trainable(), AdamWOptions{static_cast<float>(c.lr),
                                                static_cast<float>(c.weight_decay)});
}

LossBreakdown UniformBatchTrainer::train_iteration(Rng& rng) {
  const TrainConfig& c = policy_.cfg;
  std::vector<int> idx = uniform_batch(data_.size(), c.dp_batch, rng);
  DiffusionBatch batch = make_diffusion_batch(data_.gather_observations(idx),
                                              data_.gather_normalized_chunks(idx),
                                              policy_.schedule, c.per_sample_k, rng);
  LossBreakdown lb;
  if (c.method == "dp") {
    lb.expert_term = plain_dp_step(policy_.model, opt_, batch, policy_.schedule);
    lb.total = lb.expert_term;
    return lb;
  }
  opt_.zero_grad();
  {
    Tape tape;
    if (c.method == "taskwise_moe") {
      PerSampleRouter router(taskwise_route_batch(policy_.assignment, batch.obs));
      Var loss = diffusion_loss(tape, policy_.model, batch, policy_.schedule, router);
      lb.expert_term = lb.total = loss.value().item();
      tape.backward(loss);
    } else if (c.method == "vanilla_moe") {
      VanillaGateRouter router(policy_.gates);
      Var mse = diffusion_loss(tape, policy_.model, batch, policy_.schedule, router);
      Var balance;
      for (const Var& v : router.balance_terms()) balance = balance.valid() ? ag::add(balance, v) : v;
      Var loss = balance.valid()
                     ? ag::add(mse, ag::scale(balance, static_cast<float>(c.balance_weight)))
                     : mse;
      lb.expert_term = mse.value().item();
      lb.balance = balance.valid() ? balance.value().item() : 0.0;
      lb.total = loss.value().item();
      tape.backward(loss);
    } else {
      throw ContractError("no uniform-batch trainer for method " + c.method);
    }
  }
  opt_.step();
  return lb;
}

std::unique_ptr<Trainer> make_trainer(Policy& policy, const Dataset& data) {
  if (policy.cfg.method == "dibm") return std::make_unique<DibmTrainer>(policy, data);
  return std::make_unique<UniformBatchTrainer>(policy, data);
}

LogPartition fit_log_partition(Policy& policy, const Dataset& data, std::size_t samples,
                               Rng& rng) {
  if (samples == 0 || samples >= data.size()) {
    return estimate_log_partition(policy.gating, data.all_observations());
  }
  std::vector<int> idx = uniform_batch(data.size(), samples, rng);
  return estimate_log_partition(policy.gating, data.gather_observations(idx));
}

TrainLog train_policy(Policy& policy, const Dataset& data, Rng& rng, const TrainOptions& opts) {
  const TrainConfig& c = policy.cfg;
  const int iters = opts.iterations >= 0 ? opts.iterations : resolve_iterations(c, data.size());
  auto trainer = make_trainer(policy, data);
  const bool dibm = c.method == "dibm";
  const std::size_t batch = dibm ? c.gating_batch : c.dp_batch;
  const int kl_every = c.kl_every > 0 ? c.kl_every
                                      : static_cast<int>((data.size() + batch - 1) / batch);
  Tensor all_obs = dibm ? data.all_observations() : Tensor();
  TrainLog log;
  log.rows.reserve(static_cast<std::size_t>(iters));
  for (int it = 0; it < iters; ++it) {
    LossBreakdown lb = trainer->train_iteration(rng);
    lb.iteration = it;
    if (dibm && ((it + 1) % kl_every == 0 || it + 1 == iters)) {
      Tensor e = policy.gating.energies(all_obs);
      lb.kl = kl_from_energies(e, log_partition_from_energies(e));
    }
    if (opts.on_iteration) opts.on_iteration(lb);
    log.rows.push_back(std::move(lb));
  }
  if (dibm) {
    policy.log_z = fit_log_partition(policy, data, c.log_partition_samples, rng);
  } else {
    policy.log_z.log_z.assign(c.num_experts, 0.0f);
    policy.log_z.samples = data.size();
  }
  return log;
}

namespace {
std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace

void write_loss_csv_header(std::ostream& os, std::size_t k) {
  os << "method,iteration,expert_term,gating_mse,gating_repulsion,gating_entropy,balance,total,kl,"
        "warmup";
  for (std::size_t e = 0; e < k; ++e) os << ",buffer_fill_" << e;
  os << "\n";
}

void write_loss_csv_row(std::ostream& os, const std::string& method, const LossBreakdown& r,
                        std::size_t k) {
  os << method << ',' << r.iteration << ',' << num(r.expert_term) << ',' << num(r.gating_mse) << ','
     << num(r.gating_repulsion) << ',' << num(r.gating_entropy) << ',' << num(r.balance) << ','
     << num(r.total) << ',' << num(r.kl) << ',' << (r.warmup ? 1 : 0);
  for (std::size_t e = 0; e < k; ++e) os << ',' << (e < r.buffer_fill.size() ? r.buffer_fill[e] : 0);
  os << "\n";
}

void save_loss_csv(const std::filesystem::path& path, const std::string& method,
                   const TrainLog& log, std::size_t k) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  write_loss_csv_header(f, k);
  for (const auto& r : log.rows) write_loss_csv_row(f, method, r, k);
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace dibm
