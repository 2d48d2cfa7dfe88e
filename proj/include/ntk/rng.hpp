#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ntk {

// All randomness flows from one root seed through named sub-streams, so
// toggling one component does not perturb the others.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t substream_seed(uint64_t root, std::string_view name) {
  uint64_t h = fnv1a64(name) ^ (root * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

inline std::mt19937_64 make_rng(uint64_t root, std::string_view name) {
  return std::mt19937_64(substream_seed(root, name));
}

}  // namespace ntk
