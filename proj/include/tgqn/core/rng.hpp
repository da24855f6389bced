#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "tgqn/core/tensor.hpp"

namespace tgqn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(const std::string& tag) {
  // FNV-1a, stable across platforms.
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic random source. All distributions are implemented explicitly
// on top of mt19937_64 so that streams are reproducible independent of the
// standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)), seed_of_(seed) {}

  // Independent child stream identified by a tag.
  Rng derive(const std::string& tag) const {
    return Rng(splitmix64(seed_of_ ^ hash_tag(tag)));
  }
  Rng derive(std::uint64_t salt) const {
    return Rng(splitmix64(seed_of_ ^ splitmix64(salt)));
  }

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Multiply-shift rejection-free mapping; bias < 2^-64, fine for sampling.
    const unsigned __int128 prod =
        static_cast<unsigned __int128>(gen_()) * span;
    return lo + static_cast<std::int64_t>(prod >> 64);
  }

  // Standard normal via Box-Muller; always consumes exactly two uniforms.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(mean + stddev * normal());
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(uniform(lo, hi));
  }

  // Distinct indices in [0, n), order of first appearance (partial
  // Fisher-Yates).
  std::vector<int> sample_distinct(int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
      const int j = static_cast<int>(uniform_int(i, n - 1));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(uniform_int(0, i));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_of_ = 0;
};

}  // namespace tgqn
