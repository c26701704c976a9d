#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ptta {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent stream derived from a root seed and a name ("data", "init", "augment", "meta", ...).
inline Rng substream(std::uint64_t seed, std::string_view name) {
  return Rng(mix64(seed ^ mix64(fnv1a(name))));
}

inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return Rng(mix64(mix64(seed ^ mix64(fnv1a(name))) + index));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace ptta
