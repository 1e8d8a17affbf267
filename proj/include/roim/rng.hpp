#ifndef ROIM_RNG_HPP
#define ROIM_RNG_HPP

#include <cstdint>
#include <vector>

namespace roim {

// Counter-based randomness. Every draw is a pure function of
// (seed, stream, counter), so batch work can be split across threads in any
// way without changing a single sample. The mixer is the splitmix64
// finalizer applied to the combined key.
namespace rng {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t stream,
                            std::uint64_t counter) {
  std::uint64_t h = mix64(seed ^ 0x8f0c6b2d1a3e5f77ULL);
  h = mix64(h ^ stream);
  return mix64(h ^ counter);
}

// Uniform double in [0,1) with 53 random bits.
inline double uniform(std::uint64_t seed, std::uint64_t stream,
                      std::uint64_t counter) {
  return static_cast<double>(derive(seed, stream, counter) >> 11) *
         0x1.0p-53;
}

}  // namespace rng

// Sequential generator over a fixed (seed, stream) pair; advances a counter.
class Counter {
 public:
  Counter(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return rng::derive(seed_, stream_, counter_++); }

  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Index in [0,n).
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_uniform() * static_cast<double>(n));
  }

  // Draws from unnormalized nonnegative weights.
  std::size_t next_weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = next_uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace roim

#endif
