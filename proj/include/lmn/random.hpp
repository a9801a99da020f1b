// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams with fully pinned output.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The distribution mappings below are written out here rather
// than taken from <random>, whose distributions are implementation-defined:
//   uniform01()   (u >> 11) * 2^-53, in [0, 1)
//   below(n)      rejection sampling: draw u until u >= (2^64 - n) mod n,
//                 return u mod n
//   normal()      Box-Muller on two uniform01() draws, cosine branch only
//   shuffle()     Fisher-Yates from the back: for i = n-1 .. 1 swap
//                 element i with element below(i + 1)

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace lmn {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t u = engine_();
      if (u >= threshold) return u % n;
    }
  }

  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lmn
