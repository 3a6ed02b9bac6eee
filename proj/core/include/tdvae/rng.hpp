#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

#include "tdvae/errors.hpp"

namespace tdvae {

// One splitmix64 step. Used both as the seed expander for the main generator
// and as the documented per-substream / per-sequence derivation step.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn substream names into seed perturbations.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic xoshiro256++ stream with Box-Muller normals. All randomness
// in the project flows through this type; std::mt19937 and friends are never
// used so that streams are reproducible across platforms and toolchains.
class Rng {
 public:
  // 6 words: 4 xoshiro words, the cached Box-Muller spare, and a flag.
  using State = std::array<std::uint64_t, 6>;

  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Named substream: same seed, different name -> independent-looking stream.
  static Rng substream(std::uint64_t seed, std::string_view name) {
    std::uint64_t mix = seed ^ fnv1a(name);
    return Rng(splitmix64(mix));
  }

  // Per-item stream for parallel generation: derived from (seed, index) only.
  static Rng for_index(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t mix = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return Rng(splitmix64(mix));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Fixed-point multiply keeps this branch-free
  // and deterministic; bias is below 2^-64 for the small n used here.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_int: n must be positive");
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via the trigonometric Box-Muller transform; the second
  // variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    // Avoid log(0); 2^-53 is the smallest nonzero value uniform() yields.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  void fill_normal(std::span<double> out) {
    for (auto& v : out) v = normal();
  }

  void fill_uniform(std::span<double> out, double lo, double hi) {
    for (auto& v : out) v = uniform(lo, hi);
  }

  State state() const {
    return {s_[0], s_[1], s_[2], s_[3], std::bit_cast<std::uint64_t>(spare_),
            has_spare_ ? 1ULL : 0ULL};
  }

  void set_state(const State& st) {
    s_[0] = st[0];
    s_[1] = st[1];
    s_[2] = st[2];
    s_[3] = st[3];
    spare_ = std::bit_cast<double>(st[4]);
    has_spare_ = st[5] != 0;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tdvae
