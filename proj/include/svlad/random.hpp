#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace svlad {

// splitmix64, used to derive independent stream seeds from (seed, tag) pairs.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ull));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
  return mix_seed(mix_seed(seed, tag_a), tag_b);
}

// Deterministic RNG. Raw bits come from mt19937_64; all distributions are
// implemented here rather than via <random> distribution objects, so the
// sampled sequences do not depend on the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller; consumes exactly two draws per call.
    const double u1 = std::max(uniform(), 0x1.0p-60);
    const double u2 = uniform();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Unbiased integer in [0, n), n >= 1.
  std::size_t index(std::size_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t r = (UINT64_MAX % un + 1ull) % un;  // 2^64 mod n
    const std::uint64_t t = 0ull - r;                       // accept below this
    for (;;) {
      const std::uint64_t v = gen_();
      if (r == 0 || v < t) return static_cast<std::size_t>(v % un);
    }
  }

  std::size_t index(std::size_t lo, std::size_t hi_inclusive) {
    return lo + index(hi_inclusive - lo + 1);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace svlad
