#pragma once

// Platform-stable random draws. std::mt19937_64 is fully specified by the
// standard, but the std distributions are not, so the transforms live here.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace unitprompt {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  // Independent stream for (seed, stream, salt), e.g. one per generated example.
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Index drawn proportionally to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights);
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes several words into one seed (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace unitprompt
