#pragma once

#include <utility>
#include <vector>

#include "claw/rng.hpp"
#include "claw/snapshot.hpp"
#include "claw/tensor.hpp"
#include "claw/types.hpp"

namespace claw {

// E[log|eps|] for eps ~ N(0,1): -(euler_gamma + ln 2) / 2.
double expected_log_abs_eps();

// Scalar multiplier 1 + b*p + b*sqrt(p(1-p))*eps with 1 + b = s * sigmoid(a).
// Requires p in (0,1) and s >= kSMin.
double adaptation_multiplier(double p, double a, double s, double eps);

// Mean and variance of a Bernoulli(p): (p, p(1-p)). Requires p in [0,1].
std::pair<double, double> bernoulli_moment_match(double p);

// Per-weight Gaussian implied by the multiplier reparameterization.
struct InducedGaussian {
  std::size_t in = 0, out = 0;
  std::vector<double> w_mean, w_var;  // [in*out]
  std::vector<double> b_mean, b_var;  // [out]
};

// Dense layer with learned per-neuron adaptation: each output neuron carries
// an adaptation probability p, an unconstrained value a and a maximum s; one
// multiplier per neuron scales that neuron's incoming weight column and bias.
class AdaptiveVariationalLayer {
 public:
  AdaptiveVariationalLayer(std::size_t in, std::size_t out, Activation act, AdaptMode mode,
                           Rng& rng);

  static AdaptiveVariationalLayer from_snapshot(const LayerSnapshot& ls);

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Activation activation() const { return act_; }
  AdaptMode mode() const { return mode_; }

  Tensor& gamma() { return gamma_; }
  Tensor& bias_gamma() { return bias_gamma_; }
  Tensor& p() { return p_; }
  Tensor& a() { return a_; }
  Tensor& s() { return s_; }
  const Tensor& gamma() const { return gamma_; }
  const Tensor& bias_gamma() const { return bias_gamma_; }
  const Tensor& p() const { return p_; }
  const Tensor& a() const { return a_; }
  const Tensor& s() const { return s_; }

  // x is [batch, in]. eps undefined -> deterministic forward (alpha at its
  // mean p); otherwise eps is standard-normal noise of shape [out] (one draw
  // per neuron shared across the batch) or [batch, out].
  Tensor forward(const Tensor& x, const Tensor& eps = {}) const;

  // Per-neuron multiplier as a graph tensor; undefined in `never` mode.
  Tensor multiplier(const Tensor& eps = {}) const;

  // KL of the induced posterior against the log-scale weight prior (the
  // anchor for a first task). Sums one term per neuron.
  Tensor kl_to_logscale_prior() const;

  // Closed-form Gaussian KL of the current induced posterior against the
  // snapshot's, summed over every weight and bias.
  Tensor kl_to_previous_posterior(const LayerSnapshot& prev) const;

  InducedGaussian induced_gaussian() const;
  LayerSnapshot snapshot() const;
  void restore(const LayerSnapshot& ls);

  // Clamp p into [kPMin, 1-kPMin] and s into [kSMin, kSMax]. Idempotent.
  void project();

  // Parameters updated by the per-step optimizer. s is excluded: it moves
  // only through the two-half meta update (or not at all).
  std::vector<Tensor*> trainable();

 private:
  std::size_t in_ = 0, out_ = 0;
  Activation act_ = Activation::relu;
  AdaptMode mode_ = AdaptMode::stochastic;
  Tensor gamma_;       // [in, out]
  Tensor bias_gamma_;  // [out]
  Tensor p_, a_, s_;   // [out]
};

}  // namespace claw
