#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "claw/tensor.hpp"

namespace test_support {

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

// Central-difference gradient check. `loss_fn` must rebuild the graph from
// the current leaf values on every call and return a scalar.
inline double max_rel_grad_err(const std::vector<claw::Tensor*>& leaves,
                               const std::function<claw::Tensor()>& loss_fn, double h = 1e-5) {
  for (claw::Tensor* leaf : leaves) leaf->zero_grad();
  claw::Tensor loss = loss_fn();
  claw::backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (claw::Tensor* leaf : leaves) analytic.push_back(leaf->grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    std::vector<double>& v = leaves[li]->values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double fp = loss_fn().item();
      v[i] = saved - h;
      const double fm = loss_fn().item();
      v[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[li][i], fd));
    }
  }
  return worst;
}

}  // namespace test_support
