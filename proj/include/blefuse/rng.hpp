#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace blefuse {

/// Seedable random source with named substreams. Each substream is an independent
/// std::mt19937_64 whose seed is SplitMix64(root seed ^ FNV-1a(label)), so adding a new
/// stream (another subject, another device) never perturbs the draws of existing ones.
class StreamRng {
 public:
  explicit StreamRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::mt19937_64 stream(std::string_view label) const { return std::mt19937_64(derive(label)); }

  std::uint64_t derive(std::string_view label) const { return splitmix64(seed_ ^ fnv1a(label)); }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
};

}  // namespace blefuse
