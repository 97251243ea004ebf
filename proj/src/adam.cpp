#include "claw/adam.hpp"

#include <cmath>

namespace claw {

void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg) {
  const std::size_t n = param.size();
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " values, parameter has " + std::to_string(n));
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  const std::vector<double>& g = param.grad();
  std::vector<double>& theta = param.values();
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace claw
