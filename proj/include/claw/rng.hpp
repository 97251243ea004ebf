#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace claw {

// splitmix64 finalizer; decorrelates derived seed streams.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent seed for stream `stream` of a base seed. Every consumer of
// randomness owns its own derived stream so that adding draws in one place
// cannot perturb another (a hard requirement for bit-reproducible runs).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix64(mix64(base) ^ mix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }

  // Uniform integer in [lo, hi] inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    std::uniform_int_distribution<std::uint64_t> d(lo, hi);
    return d(engine_);
  }

  std::vector<double> normal_vector(std::size_t n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) v = d(engine_);
    return out;
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), engine_);
    return idx;
  }

  // Sample of a categorical distribution given class probabilities.
  std::size_t categorical(const std::vector<double>& probs) {
    double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.empty() ? 0 : probs.size() - 1;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace claw
