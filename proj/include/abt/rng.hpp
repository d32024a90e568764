// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace abt {

/// Deterministic, splittable RNG (xoshiro256++ core, SplitMix64 seeding).
///
/// std::mt19937 + std::*_distribution are avoided on purpose: distribution
/// sequences are implementation-defined, and every sampled value in this
/// project must be reproducible from a seed alone. Streams are derived
/// statelessly from key tuples via from_key(), so independent workers can
/// draw without sharing mutable state.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  /// Collapses a key tuple to a single seed (order-sensitive mixing).
  static uint64_t derive_seed(std::initializer_list<uint64_t> keys) {
    uint64_t h = 0x9e3779b97f4a7c15ull;
    for (uint64_t k : keys) {
      h ^= splitmix64(k + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
      h = splitmix64(h);
    }
    return h;
  }

  /// Derives an independent stream from a tuple of keys, e.g.
  /// {master_seed, kStreamAugment, epoch, step, clip, view}.
  static Rng from_key(std::initializer_list<uint64_t> keys) { return Rng(derive_seed(keys)); }

  void reseed(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
    // All-zero state would be absorbing; splitmix64 never yields four zeros
    // from distinct inputs, but guard anyway.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
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

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());  // full range
    // Rejection sampling to kill modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  /// Standard normal via Box-Muller (the sine half is discarded so the
  /// stream position does not depend on call parity).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// A random permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
};

// Stream tags for stateless key-derived RNGs used across the trainer.
inline constexpr uint64_t kStreamShuffle = 0x5348554646ull;  // epoch shuffling
inline constexpr uint64_t kStreamCrop = 0x43524f50ull;       // random temporal crops
inline constexpr uint64_t kStreamAugment = 0x41554721ull;    // view augmentation
inline constexpr uint64_t kStreamMask = 0x4d41534bull;       // patch masking
inline constexpr uint64_t kStreamInit = 0x494e4954ull;       // parameter init
inline constexpr uint64_t kStreamDropout = 0x44524f50ull;    // dropout masks
inline constexpr uint64_t kStreamProbe = 0x50524f42ull;      // probe training

}  // namespace abt
