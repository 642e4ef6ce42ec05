#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dibm/env.hpp"
#include "dibm/tensor.hpp"

namespace dibm {

inline constexpr char kDatasetMagic[4] = {'D', 'I', 'B', 'M'};
inline constexpr std::uint16_t kDatasetVersion = 1;

/// Per-action-dimension min/max, mapping each dimension onto [-1,1].
struct NormStats {
  std::vector<float> min;
  std::vector<float> max;

  float normalize(std::size_t dim, float x) const;
  float denormalize(std::size_t dim, float x) const;
  bool operator==(const NormStats&) const = default;
};

struct PairRecord {
  int task_id = 0;
  int episode = 0;
  int phase = 0;
  int step = 0;

  bool operator==(const PairRecord&) const = default;
};

/// Immutable collection of (observation, action chunk) pairs. Chunks are
/// stored raw (environment units); `normalized_chunks()` is the training view.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t obs_dim, std::size_t horizon, std::size_t action_dim,
          std::size_t task_count);

  // Appends one pair; stats are not updated until finalize().
  void add(const PairRecord& rec, std::span<const float> obs, std::span<const float> chunk);
  void set_episode_count(int task_id, std::uint32_t count);
  // Recomputes min/max stats and the normalized view.
  void finalize();
  // Installs externally supplied stats (e.g. a pretrained model's) and rebuilds the view.
  void finalize_with(const NormStats& stats);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t obs_dim() const noexcept { return obs_dim_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t action_dim() const noexcept { return action_dim_; }
  std::size_t chunk_size() const noexcept { return horizon_ * action_dim_; }
  std::size_t task_count() const noexcept { return episode_counts_.size(); }

  std::span<const float> observation(std::size_t i) const;
  std::span<const float> chunk(std::size_t i) const;             // raw
  std::span<const float> normalized_chunk(std::size_t i) const;  // in [-1,1]
  const PairRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<std::uint32_t>& episode_counts() const noexcept { return episode_counts_; }
  const NormStats& stats() const noexcept { return stats_; }

  // Batched views for training: [n, D] and [n, H*A].
  Tensor gather_observations(std::span<const int> idx) const;
  Tensor gather_normalized_chunks(std::span<const int> idx) const;
  Tensor all_observations() const;

  // Pairs whose index is in `keep`, in that order; stats are recomputed.
  Dataset subset(std::span<const int> keep) const;

  bool operator==(const Dataset&) const = default;

 private:
  std::size_t obs_dim_ = 0, horizon_ = 0, action_dim_ = 0;
  std::vector<std::uint32_t> episode_counts_;
  NormStats stats_;
  std::vector<PairRecord> records_;
  std::vector<float> observations_;
  std::vector<float> chunks_;
  std::vector<float> normalized_;
};

struct GenerationReport {
  std::vector<int> attempts;  // per task
  std::vector<int> failures;  // rejected demonstrations per task
};

// episodes_per_task successful demonstrations of every task in `suite`.
Dataset generate_dataset(const std::vector<env::TaskSpec>& suite, int episodes_per_task,
                         std::uint64_t seed, GenerationReport* report = nullptr);

// Episode seed used for the n-th training demonstration attempt.
std::uint64_t training_episode_seed(std::uint64_t seed, int episode, int attempt);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dibm
