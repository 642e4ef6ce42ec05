#include "dibm/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "dibm/errors.hpp"

namespace dibm {

InferenceResult infer_actions(Policy& policy, const Tensor& obs, SelectMode mode,
                              std::vector<Rng>& rngs, int force_expert) {
  const std::size_t n = obs.rows();
  const std::size_t k = policy.cfg.num_experts;
  const std::size_t chunk = policy.horizon * policy.action_dim;
  if (obs.cols() != policy.obs_dim) {
    throw ContractError("observation width " + std::to_string(obs.cols()) + " != policy obs_dim " +
                        std::to_string(policy.obs_dim));
  }
  if (rngs.size() != n) throw ContractError("one generator per observation row expected");
  if (force_expert >= static_cast<int>(k) || force_expert < -1) {
    throw ContractError("forced expert " + std::to_string(force_expert) + " out of range [0, " +
                        std::to_string(k) + ")");
  }
  const std::string& method = policy.cfg.method;
  InferenceResult res;
  res.posterior = Tensor({n, k});
  res.experts.assign(n, 0);
  const bool gated = method == "vanilla_moe" && force_expert < 0;
  if (method == "dibm" && force_expert < 0) {
    res.posterior = posterior(policy.gating.energies(obs), &policy.log_z);
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (force_expert >= 0) {
      res.experts[r] = force_expert;
    } else if (method == "dibm") {
      auto row = res.posterior.row_span(r);
      if (mode == SelectMode::kArgmax) {
        res.experts[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      } else {
        const double u = rngs[r].uniform();
        double acc = 0.0;
        int pick = static_cast<int>(k) - 1;
        for (std::size_t e = 0; e < k; ++e) {
          acc += row[e];
          if (u < acc) {
            pick = static_cast<int>(e);
            break;
          }
        }
        res.experts[r] = pick;
      }
    } else if (method == "taskwise_moe") {
      res.experts[r] = taskwise_route(policy.assignment, obs.row_span(r));
    }
  }
  Tensor a({n, chunk});
  for (std::size_t r = 0; r < n; ++r) rngs[r].fill_normal(a.row_span(r));

  PerSampleRouter fixed(res.experts);
  VanillaGateRouter vanilla(policy.gates);
  ExpertRouter& router = gated ? static_cast<ExpertRouter&>(vanilla) : fixed;
  NoiseFn predict = [&](const Tensor& a_k, int step) {
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<int> ks(n, step);
    return policy.model.forward(tape, tape.constant(a_k), tape.constant(obs), ks, router).value();
  };
  for (int step : policy.inference.steps) {
    a = denoise_step(predict, a, step, policy.schedule, policy.inference);
  }
  if (gated && !vanilla.chosen().empty()) res.experts = vanilla.chosen().front();
  if (method != "dibm" || force_expert >= 0) {
    for (std::size_t r = 0; r < n; ++r) res.posterior.at(r, static_cast<std::size_t>(res.experts[r])) = 1.0f;
  }
  res.chunks = Tensor({n, chunk});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < chunk; ++j) {
      res.chunks.at(r, j) = policy.stats.denormalize(j % policy.action_dim, a.at(r, j));
    }
  }
  return res;
}

std::vector<float> infer_action(Policy& policy, std::span<const float> obs, SelectMode mode,
                                Rng& rng, int force_expert, int* expert) {
  std::vector<Rng> rngs{rng};
  InferenceResult r = infer_actions(policy, Tensor::row(obs), mode, rngs, force_expert);
  rng = rngs.front();
  if (expert) *expert = r.experts.front();
  auto row = r.chunks.row_span(0);
  return {row.begin(), row.end()};
}

std::uint64_t eval_episode_seed(std::uint64_t seed, int task_id, int trial) {
  return 500000 + mix_seed(seed, static_cast<std::uint64_t>(task_id), static_cast<std::uint64_t>(trial)) % 400000;
}

std::vector<EpisodeTrace> rollout(const ChunkPolicy& policy, const env::TaskSpec& task,
                                  int n_trials, const RolloutOptions& opts, std::size_t num_experts) {
  if (n_trials < 1) throw ContractError("rollout needs at least one trial");
  if (opts.force_expert >= static_cast<int>(num_experts)) {
    throw ContractError("forced expert " + std::to_string(opts.force_expert) + " out of range");
  }
  const std::size_t a_dim = env::kActionDim;
  std::vector<EpisodeTrace> traces(static_cast<std::size_t>(n_trials));
  std::vector<env::EnvState> states(traces.size());
  std::vector<int> active;
  for (int i = 0; i < n_trials; ++i) {
    auto& tr = traces[static_cast<std::size_t>(i)];
    tr.task_id = task.task_id;
    tr.episode = i;
    tr.episode_seed = eval_episode_seed(opts.seed, task.task_id, i);
    states[static_cast<std::size_t>(i)] = env::reset(task, tr.episode_seed);
    const env::Demo demo = env::scripted_demo(task, tr.episode_seed);
    const int demo_len = demo.success ? static_cast<int>(demo.actions.size()) : env::kMaxDemoSteps;
    tr.cap = opts.cap_factor * std::max(demo_len, 1);
    active.push_back(i);
  }
  while (!active.empty()) {
    std::vector<env::EnvState> batch;
    for (int i : active) batch.push_back(states[static_cast<std::size_t>(i)]);
    ChunkDecision d = policy(batch, active);
    std::vector<int> still;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto i = static_cast<std::size_t>(active[j]);
      auto& tr = traces[i];
      env::EnvState& s = states[i];
      TraceStep step;
      step.timestep = s.timestep;
      step.phase = s.phase;
      step.expert = d.experts[j];
      step.posterior = d.posteriors[j];
      step.observation = env::observe(s);
      tr.steps.push_back(std::move(step));
      const auto& chunk = d.chunks[j];
      const std::size_t horizon = chunk.size() / a_dim;
      for (int h = 0; h < opts.cadence && static_cast<std::size_t>(h) < horizon; ++h) {
        if (s.success || s.timestep >= tr.cap) break;
        env::Action act{};
        for (std::size_t c = 0; c < a_dim; ++c) act[c] = chunk[static_cast<std::size_t>(h) * a_dim + c];
        s = env::step_env(s, act);
      }
      if (s.success || s.timestep >= tr.cap) {
        tr.success = s.success;
        tr.length = s.timestep;
      } else {
        still.push_back(active[j]);
      }
    }
    active = std::move(still);
  }
  return traces;
}

std::vector<EpisodeTrace> rollout(Policy& policy, const env::TaskSpec& task, int n_trials,
                                  const RolloutOptions& opts) {
  std::vector<Rng> trial_rngs;
  for (int i = 0; i < n_trials; ++i) {
    trial_rngs.emplace_back(mix_seed(opts.seed, 0x6e6f697365ULL + static_cast<std::uint64_t>(task.task_id),
                                     static_cast<std::uint64_t>(i)));
  }
  ChunkPolicy fn = [&](const std::vector<env::EnvState>& states, const std::vector<int>& ids) {
    const std::size_t n = states.size();
    Tensor obs({n, policy.obs_dim});
    std::vector<Rng> rngs;
    for (std::size_t r = 0; r < n; ++r) {
      const auto o = env::observe(states[r]);
      std::copy(o.begin(), o.end(), obs.row_span(r).begin());
      rngs.push_back(trial_rngs[static_cast<std::size_t>(ids[r])]);
    }
    InferenceResult res = infer_actions(policy, obs, opts.mode, rngs, opts.force_expert);
    ChunkDecision d;
    for (std::size_t r = 0; r < n; ++r) {
      trial_rngs[static_cast<std::size_t>(ids[r])] = rngs[r];
      auto c = res.chunks.row_span(r);
      auto p = res.posterior.row_span(r);
      d.chunks.emplace_back(c.begin(), c.end());
      d.posteriors.emplace_back(p.begin(), p.end());
      d.experts.push_back(res.experts[r]);
    }
    return d;
  };
  return rollout(fn, task, n_trials, opts, policy.cfg.num_experts);
}

ChunkPolicy demonstrator_policy() {
  return [](const std::vector<env::EnvState>& states, const std::vector<int>&) {
    ChunkDecision d;
    for (const auto& s0 : states) {
      env::EnvState s = s0;
      std::vector<float> chunk;
      for (std::size_t h = 0; h < env::kChunkHorizon; ++h) {
        const env::Action a = env::demonstrator_action(s, 0);
        chunk.insert(chunk.end(), a.begin(), a.end());
        s = env::step_env(s, a);
      }
      d.chunks.push_back(std::move(chunk));
      d.experts.push_back(0);
      d.posteriors.push_back({1.0f});
    }
    return d;
  };
}

double mean_success(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) return 0.0;
  int s = 0;
  for (const auto& t : traces) s += t.success ? 1 : 0;
  return static_cast<double>(s) / static_cast<double>(traces.size());
}

EvalReport evaluate(Policy& policy, const std::vector<env::TaskSpec>& tasks, const EvalOptions& opts,
                    std::vector<EpisodeTrace>* traces) {
  if (tasks.empty()) throw ContractError("evaluation needs at least one task");
  const std::size_t k = policy.cfg.num_experts;
  EvalReport rep;
  rep.method = policy.cfg.method;
  RolloutOptions ro;
  ro.mode = opts.mode;
  ro.seed = opts.seed;
  double sum = 0.0;
  for (const auto& task : tasks) {
    auto tr = rollout(policy, task, opts.trials, ro);
    TaskResult r;
    r.task_id = task.task_id;
    r.name = task.name;
    r.trials = opts.trials;
    for (const auto& t : tr) r.successes += t.success ? 1 : 0;
    r.rate = static_cast<double>(r.successes) / opts.trials;
    sum += r.rate;
    auto& usage = rep.usage[task.task_id];
    usage.assign(static_cast<std::size_t>(task.phase_count), std::vector<int>(k, 0));
    for (const auto& t : tr) {
      for (const auto& s : t.steps) {
        const auto ph = static_cast<std::size_t>(std::clamp(s.phase, 0, task.phase_count - 1));
        usage[ph][static_cast<std::size_t>(s.expert)] += 1;
      }
    }
    rep.tasks.push_back(r);
    if (traces) traces->insert(traces->end(), tr.begin(), tr.end());
  }
  rep.total = sum / static_cast<double>(tasks.size());
  if (opts.forced_experts) {
    for (std::size_t e = 0; e < k; ++e) {
      RolloutOptions fo = ro;
      fo.force_expert = static_cast<int>(e);
      double s = 0.0;
      for (const auto& task : tasks) s += mean_success(rollout(policy, task, opts.trials, fo));
      rep.forced_expert_total.push_back(s / static_cast<double>(tasks.size()));
    }
  }
  return rep;
}

std::string report_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["method"] = rep.method;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : rep.tasks) {
    j["tasks"].push_back({{"task_id", t.task_id},
                          {"name", t.name},
                          {"trials", t.trials},
                          {"successes", t.successes},
                          {"success_rate", t.rate}});
  }
  j["total"] = rep.total;
  j["forced_expert_total"] = rep.forced_expert_total;
  nlohmann::ordered_json usage = nlohmann::ordered_json::object();
  for (const auto& [task, phases] : rep.usage) usage[std::to_string(task)] = phases;
  j["usage"] = usage;
  return j.dump(2);
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << report_json(report) << "\n";
  if (!f) throw IoError("write failed for " + path.string());
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}
}  // namespace

void export_traces(const std::vector<EpisodeTrace>& traces, std::size_t k,
                   const std::filesystem::path& path) {
  if (traces.empty()) throw ContractError("no traces to export");
  auto f = open_out(path);
  f << "task,episode,timestep,phase";
  for (std::size_t e = 0; e < k; ++e) f << ",posterior_" << e;
  f << ",expert,success\n";
  for (const auto& t : traces) {
    for (const auto& s : t.steps) {
      f << t.task_id << ',' << t.episode << ',' << s.timestep << ',' << s.phase;
      for (std::size_t e = 0; e < k; ++e) f << ',' << num(e < s.posterior.size() ? s.posterior[e] : 0.0f);
      f << ',' << s.expert << ',' << (t.success ? 1 : 0) << '\n';
    }
  }
  if (!f) throw IoError("write failed for " + path.string());
}

void export_sweep(const std::vector<SweepEntry>& entries, const std::filesystem::path& path) {
  if (entries.empty()) throw ContractError("no sweep entries to export");
  const std::size_t k = entries.front().conditional.cols();
  auto f = open_out(path);
  f << "beta,observation";
  for (std::size_t e = 0; e < k; ++e) f << ",conditional_" << e;
  f << "\n";
  for (const auto& en : entries) {
    if (en.conditional.cols() != k) throw DimensionError("sweep entries differ in expert count");
    for (std::size_t i = 0; i < en.conditional.rows(); ++i) {
      f << num(en.beta) << ',' << i;
      for (std::size_t e = 0; e < k; ++e) f << ',' << num(en.conditional.at(i, e));
      f << '\n';
    }
  }
  if (!f) throw IoError("write failed for " + path.string());
}

void export_ratio_curve(const std::vector<RatioPoint>& points, const std::filesystem::path& path) {
  if (points.empty()) throw ContractError("no ratio points to export");
  auto f = open_out(path);
  f << "method,ratio,seed,success\n";
  for (const auto& p : points) f << p.method << ',' << num(p.ratio) << ',' << p.seed << ',' << num(p.success) << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

void export_embeddings(Policy& policy, const Dataset& data, const std::filesystem::path& path) {
  const Tensor obs = data.all_observations();
  Tensor feats;
  {
    Tape tape;
    tape.set_grad_enabled(false);
    feats = policy.model.condition(tape, tape.constant(obs)).value();
  }
  const std::vector<int> experts = route_batch(policy, obs);
  auto f = open_out(path);
  f << "index,task,phase,expert";
  for (std::size_t c = 0; c < feats.cols(); ++c) f << ",feature_" << c;
  f << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data.record(i);
    f << i << ',' << rec.task_id << ',' << rec.phase << ',' << experts[i];
    for (std::size_t c = 0; c < feats.cols(); ++c) f << ',' << num(feats.at(i, c));
    f << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace dibm
