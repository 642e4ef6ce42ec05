#pragma once
// Checkpoint container: "DIBMCKPT", u16 version, then
//   str   config text
//   u32   obs_dim, horizon, action_dim
//   u32   tensor count; per tensor: str name, u32 rank, u32 dims[rank], f32 data
//   u32   A; f32 min[A]; f32 max[A]          normalization stats
//   u32   K; f32 log_z[K]; u64 samples        log partition
//   str   rng state
// Strings are u32-length-prefixed; everything little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "dibm/policy.hpp"

namespace dibm {

inline constexpr char kCheckpointMagic[8] = {'D', 'I', 'B', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Policy policy;
  std::string rng_state;
};

std::vector<char> encode_checkpoint(Policy& policy, const std::string& rng_state);
void save_checkpoint(Policy& policy, const std::string& rng_state, const std::filesystem::path& path);
void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path);

// When `expected` is given, its architecture fields must match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected = nullptr);
Checkpoint decode_checkpoint(std::vector<char> bytes, const TrainConfig* expected = nullptr);

// Fields that determine tensor shapes and routing.
bool same_architecture(const TrainConfig& a, const TrainConfig& b);

}  // namespace dibm
