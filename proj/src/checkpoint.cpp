#include "dibm/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"
#include "dibm/errors.hpp"

namespace dibm {

bool same_architecture(const TrainConfig& a, const TrainConfig& b) {
  return a.method == b.method && a.num_experts == b.num_experts && a.train_steps == b.train_steps &&
         a.width == b.width && a.cond_dim == b.cond_dim && a.num_blocks == b.num_blocks &&
         a.moe_every == b.moe_every && a.gating_hidden == b.gating_hidden &&
         a.gating_layers == b.gating_layers && a.activation == b.activation;
}

std::vector<char> encode_checkpoint(Policy& p, const std::string& rng_state) {
  io::Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u16(kCheckpointVersion);
  w.str(to_text(p.cfg));
  w.u32(static_cast<std::uint32_t>(p.obs_dim));
  w.u32(static_cast<std::uint32_t>(p.horizon));
  w.u32(static_cast<std::uint32_t>(p.action_dim));
  auto params = p.all_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* prm : params) {
    w.str(prm->name);
    w.u32(static_cast<std::uint32_t>(prm->value.rank()));
    for (std::size_t d : prm->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(prm->value.values());
  }
  w.u32(static_cast<std::uint32_t>(p.stats.min.size()));
  w.f32s(p.stats.min);
  w.f32s(p.stats.max);
  w.u32(static_cast<std::uint32_t>(p.log_z.log_z.size()));
  w.f32s(p.log_z.log_z);
  w.u64(p.log_z.samples);
  w.str(rng_state);
  return std::move(w.buffer());
}

void save_checkpoint(Policy& policy, const std::string& rng_state,
                     const std::filesystem::path& path) {
  io::Writer w;
  auto bytes = encode_checkpoint(policy, rng_state);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path) {
  save_checkpoint(ckpt.policy, ckpt.rng_state, path);
}

Checkpoint decode_checkpoint(std::vector<char> bytes, const TrainConfig* expected) {
  io::Reader r(std::move(bytes));
  if (r.remaining() < 8) throw ParseError(ParseError::Kind::kTruncated, "truncated payload: missing magic");
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ParseError(ParseError::Kind::kBadMagic, "bad magic: expected 'DIBMCKPT'");
  }
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseError::Kind::kVersion, "unsupported checkpoint version " +
                                                     std::to_string(version) + " (expected " +
                                                     std::to_string(kCheckpointVersion) + ")");
  }
  TrainConfig cfg;
  try {
    cfg = parse_config(r.str());
  } catch (const ConfigError& e) {
    throw ParseError(ParseError::Kind::kMalformed, std::string("stored config: ") + e.what());
  }
  if (expected && !same_architecture(cfg, *expected)) {
    throw ParseError(ParseError::Kind::kArchitecture,
                     "checkpoint architecture does not match the requested configuration");
  }
  const std::size_t obs_dim = r.u32(), horizon = r.u32(), action_dim = r.u32();
  if (obs_dim == 0 || horizon == 0 || action_dim == 0 || obs_dim > 65536 ||
      horizon * action_dim > 65536) {
    throw ParseError(ParseError::Kind::kMalformed, "implausible checkpoint dimensions");
  }
  Checkpoint ck;
  ck.policy = make_policy(cfg, obs_dim, horizon, action_dim);
  auto params = ck.policy.all_parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw ParseError(ParseError::Kind::kArchitecture,
                     "checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                         std::to_string(params.size()));
  }
  for (Parameter* prm : params) {
    const std::string name = r.str();
    if (name != prm->name) {
      throw ParseError(ParseError::Kind::kArchitecture,
                       "tensor '" + name + "' found where '" + prm->name + "' was expected");
    }
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw ParseError(ParseError::Kind::kShape, "tensor '" + name + "': implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != prm->value.shape()) {
      throw ParseError(ParseError::Kind::kShape, "tensor '" + name + "' has shape " +
                                                     shape_str(shape) + ", expected " +
                                                     shape_str(prm->value.shape()));
    }
    r.f32s(prm->value.values());
  }
  const std::uint32_t a = r.u32();
  if (a != action_dim) throw ParseError(ParseError::Kind::kShape, "normalization stats length mismatch");
  ck.policy.stats.min.resize(a);
  ck.policy.stats.max.resize(a);
  r.f32s(ck.policy.stats.min);
  r.f32s(ck.policy.stats.max);
  const std::uint32_t k = r.u32();
  if (k != cfg.num_experts) throw ParseError(ParseError::Kind::kShape, "log partition length mismatch");
  ck.policy.log_z.log_z.resize(k);
  r.f32s(ck.policy.log_z.log_z);
  ck.policy.log_z.samples = r.u64();
  ck.rng_state = r.str();
  if (r.remaining() != 0) {
    throw ParseError(ParseError::Kind::kMalformed,
                     std::to_string(r.remaining()) + " trailing bytes after checkpoint");
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(data), expected);
}

}  // namespace dibm
