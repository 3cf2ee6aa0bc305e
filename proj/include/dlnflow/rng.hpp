#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dlnflow {

// Counter-based generator. Every draw is a pure function of (key, counter),
// so streams can be split off deterministically and replayed exactly.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  // Independent child stream; does not advance this generator.
  [[nodiscard]] CounterRng split(std::uint64_t stream) const {
    CounterRng child(0);
    child.key_ = mix(key_ + 0x9e3779b97f4a7c15ULL * (stream + 1));
    return child;
  }

  [[nodiscard]] std::uint64_t bits_at(std::uint64_t counter) const {
    return mix(key_ ^ mix(counter + 0xd1b54a32d192ed03ULL));
  }

  std::uint64_t next_u64() { return bits_at(counter_++); }

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift; bias is below 2^-64 * n which is irrelevant here.
    const unsigned __int128 m =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dlnflow
