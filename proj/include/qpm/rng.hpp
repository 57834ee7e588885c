#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace qpm {

// Seed derivation for named sub-streams (splitmix64 finalizer). Every
// component that needs randomness gets its own derived stream so that adding
// draws in one place cannot shift another component's sequence.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream_tag);

// Stream tags used across the library.
namespace stream {
inline constexpr std::uint64_t kWorld = 0x01;
inline constexpr std::uint64_t kDataset = 0x02;
inline constexpr std::uint64_t kEncoderInit = 0x03;
inline constexpr std::uint64_t kSampler = 0x04;
inline constexpr std::uint64_t kLoss = 0x05;
inline constexpr std::uint64_t kUiPool = 0x06;
inline constexpr std::uint64_t kEvalData = 0x07;
inline constexpr std::uint64_t kEvalPairs = 0x08;
}  // namespace stream

// Deterministic RNG. mt19937_64 is bit-exact across platforms and the
// distributions are hand-rolled (std:: distributions are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the spare value is cached.
  double gaussian();

  // Uniform in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // Independent child stream.
  Rng stream(std::uint64_t tag) const { return Rng(derive_seed(seed_, tag)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qpm
