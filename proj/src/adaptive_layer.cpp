#include "claw/adaptive_layer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace claw {

double expected_log_abs_eps() {
  constexpr double kEulerGamma = 0.57721566490153286;
  constexpr double kLn2 = 0.69314718055994531;
  return -(kEulerGamma + kLn2) / 2.0;
}

double adaptation_multiplier(double p, double a, double s, double eps) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("adaptation_multiplier: p must lie strictly in (0,1), got " +
                            std::to_string(p));
  }
  if (s < kSMin) {
    throw std::domain_error("adaptation_multiplier: s must be >= " + std::to_string(kSMin) +
                            ", got " + std::to_string(s));
  }
  const double b = s * stable_sigmoid(a) - 1.0;
  return 1.0 + b * p + b * std::sqrt(p * (1.0 - p)) * eps;
}

std::pair<double, double> bernoulli_moment_match(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("bernoulli_moment_match: p must lie in [0,1], got " +
                            std::to_string(p));
  }
  return {p, p * (1.0 - p)};
}

AdaptiveVariationalLayer::AdaptiveVariationalLayer(std::size_t in, std::size_t out, Activation act,
                                                   AdaptMode mode, Rng& rng)
    : in_(in), out_(out), act_(act), mode_(mode) {
  const double sd = std::sqrt(2.0 / static_cast<double>(in + out));
  std::vector<double> g(in * out);
  for (auto& v : g) v = sd * rng.normal();
  gamma_ = Tensor::from(std::move(g), {in, out}, true);
  bias_gamma_ = Tensor::zeros({out}, true);
  p_ = Tensor::full({out}, 0.5, true);
  a_ = Tensor::zeros({out}, true);
  s_ = Tensor::full({out}, 2.0, true);
}

AdaptiveVariationalLayer AdaptiveVariationalLayer::from_snapshot(const LayerSnapshot& ls) {
  Rng unused(0);
  AdaptiveVariationalLayer layer(ls.in, ls.out, ls.act, ls.mode, unused);
  layer.restore(ls);
  return layer;
}

void AdaptiveVariationalLayer::restore(const LayerSnapshot& ls) {
  if (ls.in != in_ || ls.out != out_ || ls.mode != mode_ || ls.act != act_) {
    throw ShapeError("layer restore: snapshot is " + std::to_string(ls.in) + "x" +
                     std::to_string(ls.out) + ", layer is " + std::to_string(in_) + "x" +
                     std::to_string(out_));
  }
  gamma_.values() = ls.gamma;
  bias_gamma_.values() = ls.bias_gamma;
  p_.values() = ls.p;
  a_.values() = ls.a;
  s_.values() = ls.s;
}

Tensor AdaptiveVariationalLayer::multiplier(const Tensor& eps) const {
  if (mode_ == AdaptMode::never) return {};
  if (mode_ == AdaptMode::always) return mul(s_, sigmoid(a_));  // 1 + b = s * sigmoid(a)

  for (double v : p_.values()) {
    if (!(v > 0.0 && v < 1.0)) {
      throw std::domain_error("adaptive layer: p outside (0,1): " + std::to_string(v));
    }
  }
  Tensor b = sub(mul(s_, sigmoid(a_)), 1.0);
  if (!eps.defined()) {
    return add(mul(b, p_), 1.0);  // alpha at its mean
  }
  Tensor sd = sqrt(mul(p_, sub(1.0, p_)));
  if (eps.shape().size() == 1) {
    if (eps.shape()[0] != out_) {
      throw ShapeError("adaptive layer: eps " + shape_str(eps.shape()) + " for " +
                       std::to_string(out_) + " neurons");
    }
    Tensor alpha = add(p_, mul(sd, eps));
    return add(mul(b, alpha), 1.0);
  }
  if (eps.shape().size() == 2 && eps.shape()[1] == out_) {
    Tensor alpha = add_rowvec(mul_rowvec(eps, sd), p_);  // [batch, out]
    return add(mul_rowvec(alpha, b), 1.0);
  }
  throw ShapeError("adaptive layer: eps " + shape_str(eps.shape()) + " for " +
                   std::to_string(out_) + " neurons");
}

Tensor AdaptiveVariationalLayer::forward(const Tensor& x, const Tensor& eps) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw ShapeError("adaptive layer: input " + shape_str(x.shape()) + " does not match in=" +
                     std::to_string(in_));
  }
  Tensor z0 = matmul(x, gamma_);
  Tensor z;
  if (mode_ == AdaptMode::never) {
    z = add_rowvec(z0, bias_gamma_);
  } else {
    Tensor m = multiplier(eps);
    if (m.shape().size() == 1) {
      z = add_rowvec(mul_rowvec(z0, m), mul(bias_gamma_, m));
    } else {
      z = add(mul(z0, m), mul_rowvec(m, bias_gamma_));
    }
  }
  return act_ == Activation::relu ? relu(z) : z;
}

Tensor AdaptiveVariationalLayer::kl_to_logscale_prior() const {
  if (mode_ == AdaptMode::never) return Tensor::scalar(0.0);
  // Per neuron: -log s + log(1 + e^-a) - 0.5 log p - 0.5 log(1-p) + E[log|eps|].
  Tensor pp = (mode_ == AdaptMode::always) ? p_.detach() : p_;
  Tensor pterm = mul(add(log(pp), log(sub(1.0, pp))), -0.5);
  Tensor per_neuron = add(add(neg(log(s_)), softplus(neg(a_))), pterm);
  return add(sum(per_neuron), static_cast<double>(out_) * expected_log_abs_eps());
}

namespace {

Tensor gaussian_kl_sum(const Tensor& cur_mean, const Tensor& cur_var, const Tensor& prev_mean,
                       const Tensor& prev_var) {
  Tensor diff = sub(cur_mean, prev_mean);
  Tensor logs = mul(sub(log(prev_var), log(cur_var)), 0.5);
  Tensor quad = sub(div(add(cur_var, square(diff)), mul(prev_var, 2.0)), 0.5);
  return sum(add(logs, quad));
}

}  // namespace

Tensor AdaptiveVariationalLayer::kl_to_previous_posterior(const LayerSnapshot& prev) const {
  if (prev.in != in_ || prev.out != out_) {
    throw ShapeError("kl_to_previous_posterior: snapshot is " + std::to_string(prev.in) + "x" +
                     std::to_string(prev.out) + ", layer is " + std::to_string(in_) + "x" +
                     std::to_string(out_));
  }

  Tensor w_mean, w_var, b_mean, b_var;
  switch (mode_) {
    case AdaptMode::stochastic: {
      Tensor b = sub(mul(s_, sigmoid(a_)), 1.0);
      Tensor one_bp = add(mul(b, p_), 1.0);
      Tensor vcoef = mul(square(b), mul(p_, sub(1.0, p_)));
      w_mean = mul_rowvec(gamma_, one_bp);
      w_var = add(mul_rowvec(square(gamma_), vcoef), kVarFloor);
      b_mean = mul(bias_gamma_, one_bp);
      b_var = add(mul(square(bias_gamma_), vcoef), kVarFloor);
      break;
    }
    case AdaptMode::always: {
      Tensor one_b = mul(s_, sigmoid(a_));
      w_mean = mul_rowvec(gamma_, one_b);
      w_var = Tensor::full({in_, out_}, kVarFloor);
      b_mean = mul(bias_gamma_, one_b);
      b_var = Tensor::full({out_}, kVarFloor);
      break;
    }
    case AdaptMode::never: {
      w_mean = gamma_;
      w_var = Tensor::full({in_, out_}, kVarFloor);
      b_mean = bias_gamma_;
      b_var = Tensor::full({out_}, kVarFloor);
      break;
    }
  }

  Tensor pwm = Tensor::from(prev.w_mean, {in_, out_});
  Tensor pwv = Tensor::from(prev.w_var, {in_, out_});
  Tensor pbm = Tensor::from(prev.b_mean, {out_});
  Tensor pbv = Tensor::from(prev.b_var, {out_});
  return add(gaussian_kl_sum(w_mean, w_var, pwm, pwv), gaussian_kl_sum(b_mean, b_var, pbm, pbv));
}

InducedGaussian AdaptiveVariationalLayer::induced_gaussian() const {
  LayerSnapshot ls = snapshot();
  InducedGaussian ig;
  ig.in = in_;
  ig.out = out_;
  ig.w_mean = std::move(ls.w_mean);
  ig.w_var = std::move(ls.w_var);
  ig.b_mean = std::move(ls.b_mean);
  ig.b_var = std::move(ls.b_var);
  return ig;
}

LayerSnapshot AdaptiveVariationalLayer::snapshot() const {
  LayerSnapshot ls;
  ls.in = in_;
  ls.out = out_;
  ls.act = act_;
  ls.mode = mode_;
  ls.gamma = gamma_.values();
  ls.bias_gamma = bias_gamma_.values();
  ls.p = p_.values();
  ls.a = a_.values();
  ls.s = s_.values();
  compute_induced(ls);
  return ls;
}

void AdaptiveVariationalLayer::project() {
  for (double& v : p_.values()) v = std::clamp(v, kPMin, 1.0 - kPMin);
  for (double& v : s_.values()) v = std::clamp(v, kSMin, kSMax);
}

std::vector<Tensor*> AdaptiveVariationalLayer::trainable() {
  switch (mode_) {
    case AdaptMode::stochastic: return {&gamma_, &bias_gamma_, &p_, &a_};
    case AdaptMode::always: return {&gamma_, &bias_gamma_, &a_};
    case AdaptMode::never: return {&gamma_, &bias_gamma_};
  }
  return {};
}

}  // namespace claw
