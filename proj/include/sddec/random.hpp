#pragma once

#include <cstdint>
#include <random>

namespace sddec {

// splitmix64; used to derive independent per-purpose / per-sample seeds so that
// sampling never depends on worker count or chunking.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e9b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = mix_seed(base ^ 0xa5a5a5a5a5a5a5a5ULL);
  s = mix_seed(s ^ a);
  s = mix_seed(s ^ b);
  s = mix_seed(s ^ c);
  return s;
}

// Deterministic standard-normal generator (polar Box-Muller on a 64-bit
// engine); avoids reliance on the library's unspecified normal_distribution.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

 private:
  double uniform() {
    // 53-bit mantissa uniform in (0, 1]
    return (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
  }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sddec
