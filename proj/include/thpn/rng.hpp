#pragma once

#include <cstdint>
#include <vector>

namespace thpn {

// xoshiro256** seeded through splitmix64. Identical seeds give identical
// draw sequences on every platform; all randomness in the artifact flows
// through instances of this class.
class RngState {
 public:
  explicit RngState(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53 mantissa bits.
  double uniform();

  // Uniform integer in [0, bound); bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);

  // Box-Muller normal draw.
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace thpn
