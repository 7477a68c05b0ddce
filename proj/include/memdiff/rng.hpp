#pragma once

#include <cmath>
#include <cstdint>

#include "memdiff/common.hpp"

namespace memdiff {

// Counter-based generator: every output is a pure function of (key, counter),
// with no hidden state beyond the counter. splitmix64 finalizer on
// key + gamma*counter. Gaussians come from Box-Muller, one normal per call
// (the second of the pair is discarded), so the stream position is always
// exactly the number of draws made. derive() builds statistically independent
// child streams from integer tags; training keys a child stream off the step
// index, which is what makes checkpoint resume replay the identical stream.
struct SeededRng {
  uint64_t key = 0;
  uint64_t ctr = 0;

  SeededRng() = default;
  explicit SeededRng(uint64_t seed) : key(mix(seed ^ 0x9E3779B97F4A7C15ull)) {}

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return mix(key + 0x9E3779B97F4A7C15ull * ++ctr); }

  SeededRng derive(uint64_t tag) const {
    SeededRng child;
    child.key = mix(key + 0xD1B54A32D192ED03ull * (tag + 1));
    return child;
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1p-53; }

  double normal() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1p-53;  // (0, 1]
    double u2 = double(next_u64() >> 11) * 0x1p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // uniform integer in [0, n); Lemire multiply-shift (bias ~ n / 2^64)
  uint64_t below(uint64_t n) {
    return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }
};

}  // namespace memdiff
