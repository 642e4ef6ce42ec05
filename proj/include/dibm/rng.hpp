#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace dibm {

// splitmix64 finalizer; combines seeds into independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Seeded generator with stateless transforms, so the whole state is the
/// engine state and can be checkpointed as a string.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n);  // [0, n)
  float normal();
  void fill_normal(std::span<float> out);
  double gumbel();
  bool coin() { return uniform() < 0.5; }

  std::string state() const;
  void set_state(const std::string& s);
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dibm
