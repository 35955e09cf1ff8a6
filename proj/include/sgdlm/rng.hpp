#pragma once

#include <cstdint>
#include <random>

namespace sgdlm {

// splitmix64 finalizer, used to turn key tuples into well-mixed seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Keyed stream splitting: every consumer derives its generator from
// (seed, tag, a, b), so per-series streams do not depend on evaluation
// order and parallel runs reproduce serial ones bit for bit.
class RngSplitter {
 public:
  explicit RngSplitter(std::uint64_t seed) : seed_(seed) {}

  std::mt19937_64 stream(std::uint64_t tag, std::uint64_t a = 0,
                         std::uint64_t b = 0) const {
    std::uint64_t s = mix64(seed_ ^ mix64(tag));
    s = mix64(s ^ mix64(a + 0x517cc1b727220a95ULL));
    s = mix64(s ^ mix64(b + 0x2545f4914f6cdd1dULL));
    return std::mt19937_64(s);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

namespace rng_tag {
inline constexpr std::uint64_t kSimReturns = 0x11;
inline constexpr std::uint64_t kSimSigns = 0x12;
inline constexpr std::uint64_t kSimFactor = 0x13;
inline constexpr std::uint64_t kSimOhlc = 0x14;
inline constexpr std::uint64_t kPosteriorMc = 0x21;
inline constexpr std::uint64_t kForecastMc = 0x22;
inline constexpr std::uint64_t kForecastKstep = 0x23;
}  // namespace rng_tag

}  // namespace sgdlm
