#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace qts {

/// xoshiro256** seeded through splitmix64, with Box-Muller normals.
/// The algorithm is fixed so that seeded runs reproduce across platforms.
class Rng
{
public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed)
  {
    std::uint64_t z = seed;
    for (auto & s : state_) { s = splitmix64(z); }
    has_spare_ = false;
  }

  std::uint64_t next()
  {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) { u1 = uniform(); }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  static std::uint64_t splitmix64(std::uint64_t & x)
  {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Independent stream for (seed, stream) pairs.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream)
  {
    std::uint64_t x = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    return splitmix64(x);
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4] = {};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qts
