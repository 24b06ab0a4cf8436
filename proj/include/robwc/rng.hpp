#pragma once

#include <cstdint>
#include <string_view>

namespace robwc {

// Deterministic 64-bit generator (splitmix64). All randomness in the library
// flows from one root seed through Rng::derive, so every run is reproducible
// bit-for-bit regardless of thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Labeled sub-stream seed: hash the label and index into the root seed.
  // Label strings keep independent components (runs, particles, draws)
  // decoupled even when their indices collide.
  static std::uint64_t derive(std::uint64_t root, std::string_view label,
                              std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ull ^ root;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    Rng mixer(h);
    return mixer.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace robwc
