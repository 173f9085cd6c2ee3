#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dgmark {

// splitmix64 finalizer; used to derive substream seeds and as the keyed mixer
// in the parity partition.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed of the named substream (sequence id, stage) under a root seed.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view sequence_id,
                                    std::string_view stage) noexcept {
  std::uint64_t h = mix64(root);
  h = mix64(h ^ fnv1a64(sequence_id));
  h = mix64(h ^ fnv1a64(stage));
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(mix64(mix64(root) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL));
}

// A seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; conversions to doubles and bounded integers are done
// here rather than through <random> distributions, whose algorithms vary
// between standard library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t uniform_below(std::uint64_t bound) {
    const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  // Independent stream keyed on (a, b); does not advance this stream.
  RngStream fork(std::uint64_t a, std::uint64_t b) const { return RngStream(derive_seed(seed_, a, b)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dgmark
