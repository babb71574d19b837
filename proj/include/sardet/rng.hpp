#pragma once

#include <cmath>
#include <cstdint>

namespace sardet {

// SplitMix64. Chosen over std::mt19937 + std distributions so that streams
// are identical across standard libraries; dataset files and training runs
// must be byte-reproducible for a fixed seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 1) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Gamma(shape=looks, scale=1/looks) for integer looks >= 1, i.e. the mean-1
  // L-look intensity speckle factor. Erlang construction: mean 1, variance 1/L.
  double gamma_looks(int looks) {
    double log_prod = 0.0;
    for (int i = 0; i < looks; ++i) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      log_prod += std::log(u);
    }
    return -log_prod / static_cast<double>(looks);
  }

  // independent stream for item `index` of a run seeded with `seed`
  static Rng for_index(std::uint64_t seed, std::uint64_t index) {
    Rng mixer(seed ^ (0x6a09e667f3bcc909ULL + index * 0x9e3779b97f4a7c15ULL));
    mixer.next_u64();
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace sardet
