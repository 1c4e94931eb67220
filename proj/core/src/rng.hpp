// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lagcd::detail {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Independent generator for one named purpose under a run seed.
inline std::mt19937_64 stream(std::uint64_t seed, std::string_view tag) {
  const std::uint64_t t = fnv1a(tag);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace lagcd::detail
