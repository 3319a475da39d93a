#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace mlpreg {

/// Seeded generator with named substreams.
///
/// The engine (mt19937_64), the seeding algorithm (std::seed_seq) and the
/// conversions below are all fully specified, so a (seed, stream...) tuple
/// yields the same bits on every conforming platform. std::*_distribution is
/// implementation-defined and deliberately not used.
class Rng {
 public:
  static constexpr const char* kAlgorithm =
      "mt19937_64/seed_seq(seed_lo,seed_hi,stream...)/u53/box-muller";

  explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                     static_cast<std::uint32_t>(seed >> 32)};
    for (std::uint64_t s : stream) {
      words.push_back(static_cast<std::uint32_t>(s));
      words.push_back(static_cast<std::uint32_t>(s >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform on the open interval (lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_open(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the log argument in (0, 1].
    const double r = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stream tags. Keeping them distinct makes e.g. the noise draws independent
/// of the input dimension for a fixed seed.
namespace stream {
inline constexpr std::uint64_t kInputs = 0x5a;
inline constexpr std::uint64_t kNoise = 0xe5;
inline constexpr std::uint64_t kInit = 0x1a;
inline constexpr std::uint64_t kReplication = 0x4e;
inline constexpr std::uint64_t kPerturb = 0x9b;
inline constexpr std::uint64_t kReference = 0x7f;
}  // namespace stream

/// Seed of replication `index` derived from a study seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return Rng(seed, {tag, index}).next_u64();
}

}  // namespace mlpreg
