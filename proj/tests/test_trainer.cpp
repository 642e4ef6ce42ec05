#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "dibm/errors.hpp"
#include "dibm/experiments.hpp"
#include "dibm/trainer.hpp"

using namespace dibm;

namespace {

std::vector<Tensor> grads_of(const std::vector<Parameter*>& ps) {
  std::vector<Tensor> out;
  for (auto* p : ps) out.push_back(p->grad);
  return out;
}

void zero(const std::vector<Parameter*>& ps) {
  for (auto* p : ps) p->zero_grad();
}

bool all_zero(const std::vector<Tensor>& gs) {
  for (const auto& g : gs)
    for (float v : g.values())
      if (v != 0.0f) return false;
  return true;
}

bool identical(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::equal(a[i].values().begin(), a[i].values().end(), b[i].values().begin())) return false;
  }
  return true;
}

struct Fixture {
  Dataset data = testing::small_suite();
  TrainConfig cfg;
  Policy policy;
  explicit Fixture(std::size_t k = 3, std::uint64_t seed = 0) {
    cfg = testing::tiny_config("dibm", k);
    cfg.seed = seed;
    policy = make_policy(cfg, data);
  }
};

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("expert buffer is a bounded FIFO") {
  ExpertBuffer b(3);
  b.push(std::vector<int>{1, 2});
  CHECK(b.size() == 2);
  b.push(std::vector<int>{3, 4});
  CHECK(std::vector<int>(b.items().begin(), b.items().end()) == std::vector<int>{2, 3, 4});
  Rng rng(1);
  bool warm = false;
  auto d = b.draw(3, rng, &warm);
  CHECK_FALSE(warm);
  std::sort(d.begin(), d.end());
  CHECK(d == std::vector<int>{2, 3, 4});
  auto w = b.draw(5, rng, &warm);
  CHECK(warm);
  CHECK(w.size() == 5);
  for (int v : w) CHECK((v >= 2 && v <= 4));
  ExpertBuffer empty(4);
  CHECK_THROWS_AS(empty.draw(1, rng), ContractError);
}

TEST_CASE("uniform batches are distinct when the dataset is large enough") {
  Rng rng(2);
  auto b = uniform_batch(100, 40, rng);
  std::sort(b.begin(), b.end());
  CHECK(std::adjacent_find(b.begin(), b.end()) == b.end());
  CHECK(uniform_batch(3, 10, rng).size() == 10);
  CHECK_THROWS_AS(uniform_batch(0, 1, rng), ContractError);
}

TEST_CASE("gating objective under uniform energies has the closed form") {
  const std::size_t b = 6, k = 4;
  const double m = 0.37, beta = 0.01;
  Tape tape;
  LossBreakdown lb;
  Var term = gating_objective(tape, tape.constant(Tensor({b, k}, 1.5f)), Tensor({b, k}, static_cast<float>(m)),
                              beta, &lb);
  const double expect = k * (m - beta * std::log(1.0 / k) + beta * std::log(1.0 / b));
  CHECK(term.value().item() == doctest::Approx(expect).epsilon(1e-6));
  CHECK(lb.gating_mse + lb.gating_repulsion + lb.gating_entropy == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("gating objective with beta zero is the weighted MSE") {
  const Tensor e = testing::random_tensor({5, 3}, 4, 2.0f);
  Tensor mse = testing::random_tensor({5, 3}, 5);
  for (auto& v : mse.values()) v = std::abs(v);
  const Tensor cond = batch_conditional(e);
  double expect = 0;
  for (std::size_t i = 0; i < cond.numel(); ++i) expect += cond[i] * mse[i];
  Tape tape;
  LossBreakdown lb;
  Var term = gating_objective(tape, tape.constant(e), mse, 0.0, &lb);
  CHECK(term.value().item() == doctest::Approx(expect).epsilon(1e-5));
  CHECK(lb.gating_repulsion == 0.0);
  CHECK(lb.gating_entropy == 0.0);
  CHECK_THROWS_AS(gating_objective(tape, tape.constant(e), Tensor({5, 2}), 0.0), DimensionError);
}

TEST_CASE("stop-gradient structure holds exactly") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    Fixture fx(3, seed);
    DibmTrainer trainer(fx.policy, fx.data);
    Rng rng(seed + 100);
    bool warm = false;
    JointBatch jb = trainer.sample_batch(rng, &warm);
    auto f_params = fx.policy.model.parameters();
    auto g_params = fx.policy.gating.parameters();
    auto run = [&](double gamma) {
      zero(f_params);
      zero(g_params);
      Tape tape;
      LossBreakdown lb;
      tape.backward(joint_loss(tape, fx.policy.model, fx.policy.gating, jb, fx.policy.schedule,
                               fx.cfg.beta, gamma, &lb));
      return std::pair{grads_of(f_params), grads_of(g_params)};
    };
    // (a) the gating term adds nothing to the noise predictor.
    auto [f_with, g_with] = run(fx.cfg.gamma);
    auto [f_without, g_without] = run(0.0);
    CHECK(identical(f_with, f_without));
    // (c) the expert term adds nothing to the gating network.
    CHECK(all_zero(g_without));
    CHECK_FALSE(all_zero(g_with));
    // (b) the posterior factor behaves as a constant.
    const Tensor mse = detached_mse_table(fx.policy.model, jb, fx.policy.schedule);
    auto gating_grads = [&](bool stop_node) {
      zero(g_params);
      Tape tape;
      Var e = fx.policy.gating.energies(tape, tape.constant(jb.gating_obs));
      Var lc = ag::log_softmax(e, 0);
      Var lp = stop_node ? tape.stop_gradient(ag::log_softmax(lc, 1))
                         : tape.constant(log_softmax_values(lc.value(), 1));
      const float b = static_cast<float>(fx.cfg.beta);
      Var inner = ag::add(ag::sub(tape.constant(mse), ag::scale(lp, b)), ag::scale(lc, b));
      tape.backward(ag::sum(ag::mul(ag::exp(lc), inner)));
      return grads_of(g_params);
    };
    CHECK(identical(gating_grads(true), gating_grads(false)));
  }
}

TEST_CASE("breakdown parts recombine to the total") {
  Fixture fx(3, 7);
  DibmTrainer trainer(fx.policy, fx.data);
  Rng rng(8);
  for (int it = 0; it < 15; ++it) {
    const auto lb = trainer.train_iteration(rng);
    const double total = lb.expert_term + fx.cfg.gamma * (lb.gating_mse + lb.gating_repulsion + lb.gating_entropy);
    CHECK(std::abs(total - lb.total) <= 1e-5 * std::max(1.0, std::abs(lb.total)));
    CHECK(lb.buffer_fill.size() == 3);
  }
}

TEST_CASE("one expert without gating reduces to the plain diffusion loss") {
  Fixture fx(1, 3);
  fx.policy.cfg.gamma = 0.0;
  DibmTrainer trainer(fx.policy, fx.data);
  trainer.set_recording(true);
  Rng rng(4);
  for (auto* p : fx.policy.gating.parameters()) p->zero_grad();
  // Evaluate the loss at the pre-step parameters.
  Rng probe = rng;
  bool warm = false;
  DibmTrainer twin(fx.policy, fx.data);
  JointBatch jb = twin.sample_batch(probe, &warm);
  Tape tape;
  LossBreakdown lb;
  joint_loss(tape, fx.policy.model, fx.policy.gating, jb, fx.policy.schedule, fx.cfg.beta, 0.0, &lb);
  Tape t2;
  SingleExpertRouter router(0);
  const float plain = diffusion_loss(t2, fx.policy.model, jb.expert_batches[0], fx.policy.schedule, router)
                          .value()
                          .item();
  CHECK(lb.total == plain);
  trainer.train_iteration(rng);
  CHECK(all_zero(grads_of(fx.policy.gating.parameters())));
}

TEST_CASE("buffers only hold rows sampled for their own expert") {
  Fixture fx(3, 9);
  DibmTrainer trainer(fx.policy, fx.data);
  trainer.set_recording(true);
  std::vector<ExpertBuffer> mirror(3, ExpertBuffer(fx.cfg.buffer_capacity));
  Rng rng(10);
  for (int it = 0; it < 20; ++it) {
    trainer.train_iteration(rng);
    const auto& jb = trainer.last_batch();
    REQUIRE(jb.assigned.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(jb.assigned[e].size() == fx.cfg.samples_per_expert);
      for (int i : jb.assigned[e])
        CHECK(std::find(jb.gating_indices.begin(), jb.gating_indices.end(), i) != jb.gating_indices.end());
      mirror[e].push(jb.assigned[e]);
      CHECK(mirror[e].items() == trainer.buffers()[e].items());
      for (int i : jb.expert_indices[e])
        CHECK(std::find(mirror[e].items().begin(), mirror[e].items().end(), i) != mirror[e].items().end());
    }
  }
}

TEST_CASE("underfull buffers flag a warm-up iteration") {
  Fixture fx(2, 1);
  fx.policy.cfg.samples_per_expert = 2;
  fx.policy.cfg.expert_batch = 6;
  DibmTrainer trainer(fx.policy, fx.data);
  Rng rng(2);
  CHECK(trainer.train_iteration(rng).warmup);
  CHECK(trainer.train_iteration(rng).warmup);
  CHECK_FALSE(trainer.train_iteration(rng).warmup);
}

TEST_CASE("K=1 and gamma=0 matches plain training bit for bit") {
  Fixture fx(1, 5);
  fx.policy.cfg.gamma = 0.0;
  Policy twin = make_policy(fx.cfg, fx.data);
  DibmTrainer trainer(fx.policy, fx.data);
  trainer.set_recording(true);
  AdamW opt(twin.model.parameters(), {static_cast<float>(fx.cfg.lr), static_cast<float>(fx.cfg.weight_decay)});
  Rng rng(6);
  for (int it = 0; it < 25; ++it) {
    trainer.train_iteration(rng);
    plain_dp_step(twin.model, opt, trainer.last_batch().expert_batches[0], twin.schedule);
  }
  auto a = fx.policy.model.parameters(), b = twin.model.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i]->value.values().begin(), a[i]->value.values().end(), b[i]->value.values().begin()));
  }
}

TEST_CASE("KL diagnostic examples") {
  const LogPartition flat = log_partition_from_energies(Tensor({10, 3}, 0.4f));
  CHECK(kl_from_energies(Tensor({10, 3}, 0.4f), flat) == doctest::Approx(0.0).epsilon(1e-6));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor e = testing::random_tensor({10, 4}, seed, 3.0f);
    const LogPartition lz = log_partition_from_energies(e);
    const double kl = kl_from_energies(e, lz);
    CHECK(kl >= -1e-6);
    // Exact discrete KL by enumeration over the ten observations.
    double ref = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      double mix = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        double z = 0;
        for (std::size_t j = 0; j < 10; ++j) z += std::exp(static_cast<double>(e.at(j, k)));
        mix += 0.25 * std::exp(static_cast<double>(e.at(i, k))) / z;
      }
      ref += 0.1 * std::log(0.1 / mix);
    }
    CHECK(std::abs(kl - ref) < 1e-6);
  }
  CHECK_THROWS_AS(kl_from_energies(Tensor({0, 2}), LogPartition{{0, 0}, 0}), ContractError);
}

TEST_CASE("training records KL once per epoch and fits the log partition") {
  Fixture fx(2, 2);
  fx.policy.cfg.kl_every = 4;
  Rng rng(3);
  const TrainLog log = train_policy(fx.policy, fx.data, rng, {.iterations = 9});
  REQUIRE(log.rows.size() == 9);
  for (const auto& r : log.rows) {
    const bool expect = (r.iteration + 1) % 4 == 0 || r.iteration == 8;
    CHECK(std::isnan(r.kl) != expect);
  }
  CHECK(fx.policy.log_z.samples == fx.data.size());
  const LogPartition full = estimate_log_partition(fx.policy.gating, fx.data.all_observations());
  CHECK(fx.policy.log_z == full);
}

TEST_CASE("iterations resolve from epochs") {
  TrainConfig c;
  c.epochs = 3;
  c.gating_batch = 128;
  CHECK(resolve_iterations(c, 2662) == 3 * 21);
  c.iterations = 7;
  CHECK(resolve_iterations(c, 2662) == 7);
  c.iterations = 0;
  c.method = "dp";
  c.num_experts = 1;
  c.dp_batch = 100;
  CHECK(resolve_iterations(c, 250) == 9);
}

TEST_CASE("loss CSV has a stable header and one row per iteration") {
  Fixture fx(2, 4);
  Rng rng(5);
  const TrainLog log = train_policy(fx.policy, fx.data, rng, {.iterations = 3});
  std::ostringstream os;
  write_loss_csv_header(os, 2);
  for (const auto& r : log.rows) write_loss_csv_row(os, "dibm", r, 2);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line ==
        "method,iteration,expert_term,gating_mse,gating_repulsion,gating_entropy,balance,total,kl,"
        "warmup,buffer_fill_0,buffer_fill_1");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 11);
  }
  CHECK(rows == 3);
}

TEST_CASE("uniform-batch methods train and leave the gating untouched") {
  for (const char* method : {"dp", "taskwise_moe", "vanilla_moe"}) {
    CAPTURE(method);
    const std::size_t k = std::string(method) == "dp" ? 1 : 3;
    auto cfg = testing::tiny_config(method, k);
    const Dataset& data = testing::small_suite();
    Policy p = make_policy(cfg, data);
    const auto gating_before = p.gating.parameters()[0]->value;
    Rng rng(1);
    const TrainLog log = train_policy(p, data, rng, {.iterations = 30});
    CHECK(log.rows.back().total < log.rows.front().total);
    CHECK(std::equal(gating_before.values().begin(), gating_before.values().end(),
                     p.gating.parameters()[0]->value.values().begin()));
    if (std::string(method) == "vanilla_moe") CHECK(log.rows.back().balance > 0.0);
  }
}

TEST_CASE("subsampling is exact and deterministic") {
  const Dataset& data = testing::small_suite();
  const Dataset a = subsample_dataset(data, 0.1, 3);
  CHECK(a.size() == static_cast<std::size_t>(std::floor(0.1 * data.size())));
  CHECK(a == subsample_dataset(data, 0.1, 3));
  CHECK_FALSE(a == subsample_dataset(data, 0.1, 4));
  CHECK(subsample_dataset(data, 1.0, 3).size() == data.size());
  CHECK(subsample_dataset(data, 1e-9, 3).size() == 1);
}

TEST_CASE("fine-tuning continues from the pretrained loss") {
  const Dataset& data = testing::small_suite();
  auto cfg = testing::tiny_config("dibm", 2);
  RunResult pre = train_run(cfg, data, {.iterations = 150});
  double tail = 0;
  for (std::size_t i = pre.log.rows.size() - 20; i < pre.log.rows.size(); ++i) tail += pre.log.rows[i].expert_term;
  tail /= 20;
  RunResult ft = finetune(pre.policy, data, 1.0, cfg, {.iterations = 5});
  double head = 0;
  for (const auto& r : ft.log.rows) head += r.expert_term;
  head /= 5;
  CHECK(head < 2.0 * tail);
  auto other = cfg;
  other.width = 32;
  CHECK_THROWS_AS(finetune(pre.policy, data, 0.5, other, {.iterations = 1}), ParseError);
}

}
