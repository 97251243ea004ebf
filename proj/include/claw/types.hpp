#pragma once

#include <cmath>
#include <cstdint>

namespace claw {

// Overflow-safe logistic; every sigmoid evaluation in the project routes
// through this one expression so scalar and graph paths agree bitwise.
inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class Activation : std::uint8_t { relu = 0, identity = 1 };

// How the per-neuron adaptation variable behaves. `stochastic` is the normal
// regime; `always` pins the adaptation indicator to 1 and `never` to 0 (the
// two architectural ablations).
enum class AdaptMode : std::uint8_t { stochastic = 0, always = 1, never = 2 };

enum class HeadMode : std::uint8_t { single = 0, multi = 1 };

// Projection bounds for the adaptation parameters.
inline constexpr double kPMin = 1e-4;
inline constexpr double kSMin = 1.0 + 1e-3;
inline constexpr double kSMax = 20.0;

// Additive floor on induced weight variances; keeps the Gaussian KL finite
// when the multiplier noise vanishes.
inline constexpr double kVarFloor = 1e-8;

}  // namespace claw
