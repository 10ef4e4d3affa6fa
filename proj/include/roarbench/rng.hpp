#pragma once

#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace roarbench {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Builds an independent stream seed from a base seed and a sequence of
// labels. Adding labels to one derivation never perturbs another.
class SeedBuilder {
 public:
  explicit SeedBuilder(std::uint64_t base) : state_(mix64(base)) {}

  template <std::integral T>
  SeedBuilder& add(T v) {
    state_ = mix64(state_ ^ mix64(static_cast<std::uint64_t>(v) + 0x632be59bd9b4e019ULL));
    return *this;
  }

  SeedBuilder& add(std::string_view s) {
    // FNV-1a over the bytes, then folded in like an integer.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return add<std::uint64_t>(h);
  }

  SeedBuilder& add(double v) {
    // Drop rates are keyed by their value in millionths so that 0.3 parsed
    // from text and 0.3 written as a literal derive the same stream.
    return add<std::int64_t>(static_cast<std::int64_t>(v * 1e6 + (v >= 0 ? 0.5 : -0.5)));
  }

  std::uint64_t seed() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace roarbench
