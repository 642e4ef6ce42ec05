#include <cstring>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "dibm/checkpoint.hpp"
#include "dibm/errors.hpp"
#include "dibm/eval.hpp"
#include "dibm/experiments.hpp"

using namespace dibm;

namespace {

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunResult& trained() {
  static RunResult r = train_run(testing::tiny_config("dibm", 3), testing::small_suite(), {.iterations = 20});
  return r;
}

ParseError::Kind decode_error(std::vector<char> bytes, const TrainConfig* expected = nullptr) {
  try {
    decode_checkpoint(std::move(bytes), expected);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a parse error");
  return ParseError::Kind::kMalformed;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save, load and save again gives identical bytes") {
  const auto dir = testing::tmp_dir("ckpt_roundtrip");
  auto& r = trained();
  save_checkpoint(r.policy, r.rng_state, dir / "a.ckpt");
  Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  CHECK(back.rng_state == r.rng_state);
  CHECK(back.policy.cfg == r.policy.cfg);
  CHECK(back.policy.stats == r.policy.stats);
  CHECK(back.policy.log_z == r.policy.log_z);
  auto a = r.policy.all_parameters(), b = back.policy.all_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(), a[i]->value.numel() * 4) == 0);
  }
}

TEST_CASE("a loaded checkpoint reproduces inference bit for bit") {
  const auto dir = testing::tmp_dir("ckpt_infer");
  auto& r = trained();
  save_checkpoint(r.policy, r.rng_state, dir / "a.ckpt");
  Checkpoint back = load_checkpoint(dir / "a.ckpt");
  const auto obs = env::observe(env::reset(env::build_suite(0)[2], 9));
  Rng r1(5), r2(5);
  int e1 = -1, e2 = -1;
  const auto c1 = infer_action(r.policy, obs, SelectMode::kArgmax, r1, -1, &e1);
  const auto c2 = infer_action(back.policy, obs, SelectMode::kArgmax, r2, -1, &e2);
  CHECK(c1 == c2);
  CHECK(e1 == e2);
}

TEST_CASE("corrupted headers raise distinct errors") {
  auto& r = trained();
  const auto bytes = encode_checkpoint(r.policy, r.rng_state);
  auto magic = bytes;
  magic[3] = 'Z';
  CHECK(decode_error(magic) == ParseError::Kind::kBadMagic);
  auto version = bytes;
  version[8] = 7;
  CHECK(decode_error(version) == ParseError::Kind::kVersion);
  CHECK(decode_error(std::vector<char>(bytes.begin(), bytes.begin() + 100)) == ParseError::Kind::kTruncated);
  auto extra = bytes;
  extra.push_back('x');
  CHECK(decode_error(extra) == ParseError::Kind::kMalformed);
}

TEST_CASE("a tampered shape names the tensor") {
  auto& r = trained();
  auto bytes = encode_checkpoint(r.policy, r.rng_state);
  const std::string name = "f.cond.weight";
  auto it = std::search(bytes.begin(), bytes.end(), name.begin(), name.end());
  REQUIRE(it != bytes.end());
  // name, then u32 rank, then the first dimension.
  const auto dim_at = static_cast<std::size_t>(it - bytes.begin()) + name.size() + 4;
  bytes[dim_at] = static_cast<char>(bytes[dim_at] + 1);
  try {
    decode_checkpoint(bytes);
    FAIL("expected a shape error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::kShape);
    CHECK(std::string(e.what()).find(name) != std::string::npos);
  }
}

TEST_CASE("loading onto a different architecture fails before inference") {
  auto& r = trained();
  const auto bytes = encode_checkpoint(r.policy, r.rng_state);
  TrainConfig other = r.policy.cfg;
  other.num_experts = 4;
  CHECK(decode_error(bytes, &other) == ParseError::Kind::kArchitecture);
  other = r.policy.cfg;
  other.lr = 0.5;  // optimizer settings are not architecture
  CHECK_NOTHROW(decode_checkpoint(bytes, &other));
  CHECK_THROWS_AS(load_checkpoint(testing::tmp_dir("ckpt_missing") / "none.ckpt"), IoError);
}

}
