#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "claw/tensor.hpp"

namespace claw {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of `param` from its accumulated gradient.
// State arrays are sized on first use and must match the parameter afterwards.
void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg);

// Bundles per-parameter states for a group of tensors stepped together.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) adam_step(*p, states_[p->node()], cfg_);
  }

  static void zero_grad(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::unordered_map<const detail::TensorData*, AdamState> states_;
};

}  // namespace claw
