#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace nalign {

// Counter-based generator (splitmix64). Every consumer owns its own stream,
// keyed by (seed, stream id), so draws never depend on what other code does
// with the same seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(seed ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull))) {
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  double next_normal() {
    double u1 = 1.0 - next_uniform();  // (0, 1]
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform index in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) return 0;
    auto i = static_cast<std::size_t>(next_uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  template <class V>
  void shuffle(V& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace nalign
