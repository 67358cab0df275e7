#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace crivet {

// Seedable, platform-independent randomness. The engine is std::mt19937_64
// (bit-exact by the C++ standard); all value conversions are done here rather
// than through std::*_distribution, whose outputs are implementation-defined.
//
// Stream splitting: substream(seed, i) feeds splitmix64(seed, i) into a fresh
// engine. Parallel workers draw from disjoint substreams keyed by a stable
// index (subject, bootstrap replicate), so parallel output equals serial.
inline std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed, index));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit mantissa.
  double u01() { return double(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); safe under log().
  double u01_open() { return (double(gen_() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  double exponential(double rate) { return -std::log(u01_open()) / rate; }

  // Unbiased integer on [0, n) via rejection on the modulus.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (-n) % n;
    for (;;) {
      const std::uint64_t x = gen_();
      if (x >= threshold) return x % n;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + int(below(std::uint64_t(hi - lo + 1)));
  }

  // Index into a discrete distribution given cumulative probabilities.
  int categorical(const std::vector<double>& cumprobs) {
    const double u = u01();
    for (std::size_t k = 0; k + 1 < cumprobs.size(); ++k) {
      if (u < cumprobs[k]) return int(k);
    }
    return int(cumprobs.size()) - 1;
  }

private:
  std::mt19937_64 gen_;
};

}  // namespace crivet
