#pragma once

#include <cstdint>

namespace augmorph {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based split: independent seed for stream `stream` of `master`.
/// derive_seed(m, s) = splitmix64(splitmix64(m) ^ splitmix64(s + 1)).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

}  // namespace augmorph
