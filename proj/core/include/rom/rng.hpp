#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace rom {

// splitmix64 step. Small state, full 64-bit period, cheap to fork by key.
inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stateless mix of several counters into one stream key. Used to derive
// per-(seed, step, layer, token) noise streams so results never depend on
// thread count or iteration order.
inline uint64_t stream_key(std::initializer_list<uint64_t> parts) {
  uint64_t acc = 0x243f6a8885a308d3ull;
  for (uint64_t p : parts) {
    acc ^= p + 0x9e3779b97f4a7c15ull + (acc << 6) + (acc >> 2);
    uint64_t s = acc;
    acc = splitmix64_next(s);
  }
  return acc;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; two uniforms per pair of normals.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace rom
