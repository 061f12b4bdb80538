#pragma once

// Portable pseudo-random generation used for every sampled decision
// (splits, Random retrieval, shuffled orderings).
//
// Generator: xoshiro256** 1.0 (Blackman & Vigna), state seeded by
// SplitMix64 from a 64-bit seed. Bounded integers use rejection sampling
// on the top bits, so results depend only on the seed and never on the
// standard library implementation.
//
// Sub-seeding: derive_seed(seed, label) = splitmix64(seed ^ fnv1a64(label)).
// A single manifest seed fans out to independent streams by label, e.g.
// "split/flores/hin" or "random/<query id>".

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace phonicl {

constexpr std::uint64_t splitmix64_next(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
  std::uint64_t s = seed ^ fnv1a64(label);
  return splitmix64_next(s);
}

class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64_next(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    // Largest multiple of bound that fits; reject draws above it.
    const std::uint64_t limit = max() - (max() % bound + 1) % bound;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x > limit);
    return x % bound;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

/// Draws `count` distinct indices from [0, n) by partial Fisher-Yates.
/// Returned in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                           Xoshiro256& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  if (count > n) count = n;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(count);
  return perm;
}

template <typename T>
void shuffle_in_place(std::vector<T>& items, Xoshiro256& rng) {
  for (std::size_t i = 0; i + 1 < items.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace phonicl
