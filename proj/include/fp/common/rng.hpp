#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fp {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline uint64_t hash_str(std::string_view s) { return fnv1a64(s.data(), s.size()); }

/// Deterministic random stream. All sampling goes through this wrapper so that
/// the draw sequence is pinned by our own code, not by libstdc++ distribution
/// internals. Child streams derived via child() are statistically independent
/// and depend only on the parent seed and the tag, which keeps parallel work
/// reproducible regardless of scheduling.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  uint64_t seed() const { return seed_; }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return gen_() % n;
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Independent stream derived from this stream's seed and a tag.
  RandomStream child(uint64_t tag) const {
    return RandomStream(splitmix64(seed_ ^ splitmix64(tag + 0x51ED2701ULL)));
  }

  RandomStream child(std::string_view tag) const { return child(hash_str(tag)); }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fp
