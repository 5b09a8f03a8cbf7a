#pragma once

// Seeded randomness with bit-stable draws. std::mt19937_64 is fully
// specified by the standard, but the <random> distributions are not, so the
// draw functions here are hand-rolled to keep whole runs reproducible across
// standard libraries.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace seqr {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ (v + 0x9E3779B97F4A7C15ull + (seed << 6) + (seed >> 2)));
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform double in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = uniform_int(0, i);
      std::swap(p[i], p[j]);
    }
    return p;
  }

  /// Derived generator; advances this one by a single draw.
  Rng fork() { return Rng(splitmix64(next_u64())); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace seqr
