#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace scoreflow {

// 64-bit FNV-1a. Stable across hosts; used for workflow, dataset and
// config digests and for keying planted randomness.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value);

inline std::string digest_of(std::string_view data) { return hex64(fnv1a64(data)); }

}  // namespace scoreflow
