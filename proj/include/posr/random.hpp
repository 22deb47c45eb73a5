#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace posr {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a tuple of counters (seed, epoch, sample id, ...) into one seed, so
/// each consumer gets an independent stream regardless of visiting order.
constexpr std::uint64_t stream_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> parts) {
  return std::mt19937_64(stream_seed(parts));
}

}  // namespace posr
