#pragma once

#include <array>
#include <cstdint>

namespace dys {

// Deterministic xoshiro256++ generator seeded through splitmix64.
// Hand-rolled so that streams are bit-reproducible across standard libraries;
// std::normal_distribution makes no such promise.
//
// fork(label) derives an independent substream from the *root* seed, so the
// set of substreams does not depend on how many draws the parent has made.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // [0, n), unbiased
  uint64_t uniform_u64(uint64_t n);      // [0, n), unbiased
  double normal();                       // standard normal, polar method

  Rng fork(const char* label) const;

  // Serializable state: root seed, 4 xoshiro words, spare-normal flag, spare bits.
  static constexpr int kStateWords = 7;
  std::array<uint64_t, kStateWords> state() const;
  void set_state(const std::array<uint64_t, kStateWords>& st);

 private:
  uint64_t root_seed_ = 0;
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dys
