#pragma once

#include <cstdint>

namespace svae {

/// SplitMix64 finalizer; derives independent stream seeds from a base seed
/// and a counter (epoch, step, image index).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t counter) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace svae
