// Deterministic, platform-stable PRNG.  <random> distributions are
// implementation-defined, and seeded runs here must reproduce bit-for-bit
// across standard libraries, so the generator (xoshiro256++), the seeding
// (splitmix64) and the gaussian transform (Box-Muller) are all spelled out.
#pragma once

#include <cmath>
#include <cstdint>

namespace rose {

// splitmix64 finalizer: a cheap, well-mixed 64 -> 64 bit hash.
inline uint64_t mix64(uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// well-mixed child seed for (seed, tag)
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  return mix64(seed + 0x9E3779B97F4A7C15ull * (tag + 1));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    // splitmix64 stream expands the seed into the four state words
    uint64_t s = seed;
    for (auto& word : state_) {
      s += 0x9E3779B97F4A7C15ull;
      word = mix64(s);
    }
  }

  // Independent generator for (seed, stream).  Used to give every sample its
  // own latent-noise stream, so results do not depend on batch composition,
  // evaluation order, or thread scheduling.
  static Rng for_stream(uint64_t seed, uint64_t stream) {
    return Rng(derive_seed(seed, stream));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform double in [0, 1), 53 random bits
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller; generates pairs, caches the second
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    const uint64_t min = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const uint64_t x = next_u64();
      if (x >= min) return x % n;
    }
  }

  // Fisher-Yates
  template <class T>
  void shuffle(T* first, int64_t n) {
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = int64_t(below(uint64_t(i) + 1));
      T tmp = first[i];
      first[i] = first[j];
      first[j] = tmp;
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace rose
