#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace unforge {

// Seeded generator whose derived draws (uniform, normal, shuffles) are
// specified here rather than by the standard library distributions, so a
// seed fixes the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();
  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a stream tag so sub-streams are independent.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace unforge
