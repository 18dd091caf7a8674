#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <string_view>
#include <vector>

namespace ofalab {

// Deterministic RNG with explicit algorithms so sequences never depend on the
// standard library implementation. Engine is xoshiro256**, seeded via
// splitmix64. Named sub-streams let one master seed drive independent
// generators (init, scheme sampling, shuffle, dropout, eval sampling).

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_name(std::string_view name) {
  // FNV-1a 64-bit.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform integer in [0, n). Unbiased via rejection on the top of the range.
  uint64_t uniform_u64(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(uniform_u64(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller. Both draws consumed every call, no cached spare, so the
  // stream position is a pure function of the call count.
  double normal(double mean, double stddev) {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_u64(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// Derive an independent sub-stream from (master seed, name, index).
inline Rng substream(uint64_t master_seed, std::string_view name, uint64_t index = 0) {
  uint64_t mix = master_seed;
  mix ^= hash_name(name) + 0x9e3779b97f4a7c15ULL;
  uint64_t st = mix;
  uint64_t a = splitmix64(st);
  st ^= index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
  uint64_t b = splitmix64(st);
  return Rng(a ^ b);
}

}  // namespace ofalab
