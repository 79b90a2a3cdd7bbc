#pragma once

// Portable randomness. The standard distributions are implementation
// defined, so everything that must reproduce across hosts draws raw 64-bit
// words from mt19937_64 and maps them here.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scoreflow {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits of a word.
inline double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline double uniform01(Rng& rng) { return unit_from_bits(rng()); }

/// Uniform integer in [0, n) by rejection, n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

/// Walker/Vose alias table over a fixed discrete distribution.
class AliasTable {
 public:
  /// `probabilities` must be nonnegative with positive sum; it is renormalized.
  explicit AliasTable(std::span<const double> probabilities);

  std::size_t sample(Rng& rng) const;
  std::size_t size() const noexcept { return prob_.size(); }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

/// Inverse-CDF draw from unnormalized nonnegative weights.
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

}  // namespace scoreflow
