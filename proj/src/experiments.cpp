#include "dibm/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "dibm/errors.hpp"

namespace dibm {

RunResult train_run(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  RunResult r;
  r.policy = make_policy(cfg, data);
  Rng rng(mix_seed(cfg.seed, 0x747261696eULL));
  r.log = train_policy(r.policy, data, rng, opts);
  r.rng_state = rng.state();
  return r;
}

Dataset subsample_dataset(const Dataset& data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ContractError("data ratio must lie in (0, 1]");
  if (data.empty()) throw ContractError("cannot subsample an empty dataset");
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(data.size()))));
  Rng rng(mix_seed(seed, 0x7375627365ULL));
  std::vector<int> keep = uniform_batch(data.size(), m, rng);
  std::sort(keep.begin(), keep.end());
  return data.subset(keep);
}

RunResult finetune(const Policy& pretrained, const Dataset& data, double ratio,
                   const TrainConfig& cfg, const TrainOptions& opts) {
  if (!same_architecture(pretrained.cfg, cfg)) {
    throw ParseError(ParseError::Kind::kArchitecture,
                     "pretrained checkpoint architecture does not match the fine-tuning configuration");
  }
  if (data.obs_dim() != pretrained.obs_dim ||
      data.chunk_size() != pretrained.horizon * pretrained.action_dim) {
    throw DimensionError("fine-tuning data shapes do not match the pretrained policy");
  }
  Dataset sub = subsample_dataset(data, ratio, cfg.seed);
  sub.finalize_with(pretrained.stats);
  RunResult r;
  r.policy = pretrained;
  r.policy.cfg = cfg;
  Rng rng(mix_seed(cfg.seed, 0x66696e65ULL));
  r.log = train_policy(r.policy, sub, rng, opts);
  r.rng_state = rng.state();
  return r;
}

std::vector<int> fixed_observation_sample(const Dataset& data, std::size_t n, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x6f6273ULL));
  std::vector<int> idx = uniform_batch(data.size(), std::min(n, data.size()), rng);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor batch_conditional_on(Policy& policy, const Dataset& data, const std::vector<int>& idx) {
  return batch_conditional(policy.gating.energies(data.gather_observations(idx)));
}

}  // namespace dibm
