#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace dta {

// One seeded generator per run, split into independent streams so that
// toggling one consumer (say dropout) does not perturb the draw sequence
// of the others.
enum class RngStream : int {
  kSplit = 0,
  kShuffle = 1,
  kSesNoise = 2,
  kDropout = 3,
  kInit = 4,
};
inline constexpr int kRngStreamCount = 5;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class RngPool {
 public:
  explicit RngPool(std::uint64_t seed) : seed_(seed) {
    for (int i = 0; i < kRngStreamCount; ++i) {
      streams_[i].seed(splitmix64(seed + 0x100000001b3ULL * (i + 1)));
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& stream(RngStream s) { return streams_[static_cast<int>(s)]; }

  std::string serialize() const {
    std::ostringstream os;
    os << seed_;
    for (const auto& g : streams_) os << ' ' << g;
    return os.str();
  }

  void restore(const std::string& state) {
    std::istringstream is(state);
    is >> seed_;
    for (auto& g : streams_) is >> g;
  }

 private:
  std::uint64_t seed_;
  std::array<std::mt19937_64, kRngStreamCount> streams_;
};

// Hand-rolled distributions: the standard library does not pin the
// algorithm behind normal_distribution, and Box-Muller without a cached
// spare keeps generator state fully captured by the engine itself.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

inline double normal(std::mt19937_64& g) {
  double u1 = uniform01(g);
  while (u1 <= 0.0) u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace dta
