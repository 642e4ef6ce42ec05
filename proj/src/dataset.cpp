#include "dibm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "binary_io.hpp"
#include "dibm/errors.hpp"
#include "dibm/rng.hpp"

namespace dibm {

namespace {
constexpr float kMinRange = 1e-6f;
}

float NormStats::normalize(std::size_t dim, float x) const {
  const float range = max[dim] - min[dim];
  if (range < kMinRange) return x - min[dim];
  return 2.0f * (x - min[dim]) / range - 1.0f;
}

float NormStats::denormalize(std::size_t dim, float x) const {
  const float range = max[dim] - min[dim];
  if (range < kMinRange) return x + min[dim];
  return (x + 1.0f) * 0.5f * range + min[dim];
}

Dataset::Dataset(std::size_t obs_dim, std::size_t horizon, std::size_t action_dim,
                 std::size_t task_count)
    : obs_dim_(obs_dim), horizon_(horizon), action_dim_(action_dim),
      episode_counts_(task_count, 0) {
  stats_.min.assign(action_dim, 0.0f);
  stats_.max.assign(action_dim, 0.0f);
}

void Dataset::add(const PairRecord& rec, std::span<const float> obs, std::span<const float> chunk) {
  if (obs.size() != obs_dim_) {
    throw DimensionError("dataset: observation length " + std::to_string(obs.size()) +
                         " != " + std::to_string(obs_dim_));
  }
  if (chunk.size() != chunk_size()) throw DimensionError("dataset: chunk size mismatch");
  if (rec.task_id < 0 || static_cast<std::size_t>(rec.task_id) >= episode_counts_.size()) {
    throw ContractError("dataset: task id out of range");
  }
  records_.push_back(rec);
  observations_.insert(observations_.end(), obs.begin(), obs.end());
  chunks_.insert(chunks_.end(), chunk.begin(), chunk.end());
}

void Dataset::set_episode_count(int task_id, std::uint32_t count) {
  episode_counts_.at(static_cast<std::size_t>(task_id)) = count;
}

void Dataset::finalize() {
  NormStats s;
  s.min.assign(action_dim_, std::numeric_limits<float>::infinity());
  s.max.assign(action_dim_, -std::numeric_limits<float>::infinity());
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    const std::size_t d = i % action_dim_;
    s.min[d] = std::min(s.min[d], chunks_[i]);
    s.max[d] = std::max(s.max[d], chunks_[i]);
  }
  if (chunks_.empty()) {
    s.min.assign(action_dim_, 0.0f);
    s.max.assign(action_dim_, 0.0f);
  }
  finalize_with(s);
}

void Dataset::finalize_with(const NormStats& stats) {
  if (stats.min.size() != action_dim_ || stats.max.size() != action_dim_) {
    throw DimensionError("dataset: normalization stats width mismatch");
  }
  stats_ = stats;
  normalized_.resize(chunks_.size());
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    normalized_[i] = std::clamp(stats_.normalize(i % action_dim_, chunks_[i]), -1.0f, 1.0f);
  }
}

std::span<const float> Dataset::observation(std::size_t i) const {
  return {observations_.data() + i * obs_dim_, obs_dim_};
}

std::span<const float> Dataset::chunk(std::size_t i) const {
  return {chunks_.data() + i * chunk_size(), chunk_size()};
}

std::span<const float> Dataset::normalized_chunk(std::size_t i) const {
  return {normalized_.data() + i * chunk_size(), chunk_size()};
}

Tensor Dataset::gather_observations(std::span<const int> idx) const {
  Tensor t({idx.size(), obs_dim_});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto o = observation(static_cast<std::size_t>(idx[r]));
    std::copy(o.begin(), o.end(), t.data() + r * obs_dim_);
  }
  return t;
}

Tensor Dataset::gather_normalized_chunks(std::span<const int> idx) const {
  const std::size_t w = chunk_size();
  Tensor t({idx.size(), w});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto c = normalized_chunk(static_cast<std::size_t>(idx[r]));
    std::copy(c.begin(), c.end(), t.data() + r * w);
  }
  return t;
}

Tensor Dataset::all_observations() const {
  return Tensor({size(), obs_dim_}, observations_);
}

Dataset Dataset::subset(std::span<const int> keep) const {
  Dataset out(obs_dim_, horizon_, action_dim_, episode_counts_.size());
  std::vector<std::vector<int>> episodes(episode_counts_.size());
  for (int i : keep) {
    const auto& rec = records_.at(static_cast<std::size_t>(i));
    out.add(rec, observation(static_cast<std::size_t>(i)), chunk(static_cast<std::size_t>(i)));
    auto& eps = episodes[static_cast<std::size_t>(rec.task_id)];
    if (std::find(eps.begin(), eps.end(), rec.episode) == eps.end()) eps.push_back(rec.episode);
  }
  for (std::size_t t = 0; t < episodes.size(); ++t) {
    out.episode_counts_[t] = static_cast<std::uint32_t>(episodes[t].size());
  }
  out.finalize();
  return out;
}

std::uint64_t training_episode_seed(std::uint64_t seed, int episode, int attempt) {
  return mix_seed(seed, static_cast<std::uint64_t>(episode), static_cast<std::uint64_t>(attempt)) %
         400'000ULL;
}

Dataset generate_dataset(const std::vector<env::TaskSpec>& suite, int episodes_per_task,
                         std::uint64_t seed, GenerationReport* report) {
  if (episodes_per_task < 1) throw ContractError("episodes_per_task must be >= 1");
  int max_id = 0;
  for (const auto& t : suite) max_id = std::max(max_id, t.task_id);
  Dataset d(env::kObsDim, env::kChunkHorizon, env::kActionDim,
            suite.empty() ? 0 : static_cast<std::size_t>(max_id) + 1);
  GenerationReport local;
  for (const auto& task : suite) {
    int attempts = 0, failures = 0;
    for (int ep = 0; ep < episodes_per_task; ++ep) {
      for (int attempt = 0;; ++attempt) {
        ++attempts;
        const auto demo = env::scripted_demo(task, training_episode_seed(seed, ep, attempt));
        if (!demo.success) {
          ++failures;
          if (failures * 10 > std::max(attempts, 10)) {
            throw GenerationError("demonstrator failure rate above 10% for task '" + task.name +
                                  "' (" + std::to_string(failures) + "/" +
                                  std::to_string(attempts) + ")");
          }
          continue;
        }
        for (const auto& p : demo.pairs) {
          d.add(PairRecord{task.task_id, ep, p.phase, p.step}, p.observation, p.chunk);
        }
        break;
      }
    }
    if (failures * 10 > attempts) {
      throw GenerationError("demonstrator failure rate above 10% for task '" + task.name + "'");
    }
    d.set_episode_count(task.task_id, static_cast<std::uint32_t>(episodes_per_task));
    local.attempts.push_back(attempts);
    local.failures.push_back(failures);
  }
  d.finalize();
  if (report) *report = std::move(local);
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(kDatasetMagic, 4);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.obs_dim()));
  w.u32(static_cast<std::uint32_t>(d.horizon()));
  w.u32(static_cast<std::uint32_t>(d.action_dim()));
  w.u32(static_cast<std::uint32_t>(d.task_count()));
  for (auto c : d.episode_counts()) w.u32(c);
  w.f32s(d.stats().min);
  w.f32s(d.stats().max);
  w.u64(d.size());
  const std::uint32_t record_bytes =
      static_cast<std::uint32_t>(4 * 4 + 4 * (d.obs_dim() + d.chunk_size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = d.record(i);
    w.u32(record_bytes);
    w.i32(r.task_id);
    w.i32(r.episode);
    w.i32(r.phase);
    w.i32(r.step);
    w.f32s(d.observation(i));
    w.f32s(d.chunk(i));
  }
  w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto r = io::Reader::from_file(path);
  char magic[4] = {};
  if (r.remaining() < 4) {
    throw ParseError(ParseError::Kind::kTruncated, "truncated payload: missing magic");
  }
  r.bytes(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::kBadMagic, "bad magic: expected 'DIBM'");
  }
  const auto version = r.u16();
  if (version != kDatasetVersion) {
    throw ParseError(ParseError::Kind::kVersion,
                     "unsupported dataset version " + std::to_string(version) + " (expected " +
                         std::to_string(kDatasetVersion) + ")");
  }
  const std::size_t obs_dim = r.u32(), horizon = r.u32(), action_dim = r.u32(), tasks = r.u32();
  if (obs_dim == 0 || horizon == 0 || action_dim == 0 || tasks > 4096 || obs_dim > 65536 ||
      horizon * action_dim > 65536) {
    throw ParseError(ParseError::Kind::kMalformed, "implausible dataset header dimensions");
  }
  Dataset d(obs_dim, horizon, action_dim, tasks);
  for (std::size_t t = 0; t < tasks; ++t) d.set_episode_count(static_cast<int>(t), r.u32());
  NormStats stats;
  stats.min.resize(action_dim);
  stats.max.resize(action_dim);
  r.f32s(stats.min);
  r.f32s(stats.max);
  const std::uint64_t count = r.u64();
  const std::uint32_t expected = static_cast<std::uint32_t>(4 * 4 + 4 * (obs_dim + horizon * action_dim));
  std::vector<float> obs(obs_dim), chunk(horizon * action_dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    if (len != expected) {
      throw ParseError(ParseError::Kind::kMalformed,
                       "pair record " + std::to_string(i) + " has length " + std::to_string(len) +
                           ", expected " + std::to_string(expected));
    }
    PairRecord rec;
    rec.task_id = r.i32();
    rec.episode = r.i32();
    rec.phase = r.i32();
    rec.step = r.i32();
    r.f32s(obs);
    r.f32s(chunk);
    d.add(rec, obs, chunk);
  }
  if (r.remaining() != 0) {
    throw ParseError(ParseError::Kind::kMalformed, "trailing bytes after last pair record");
  }
  d.finalize_with(stats);
  return d;
}

}  // namespace dibm
