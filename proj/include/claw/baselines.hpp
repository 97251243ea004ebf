#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "claw/rng.hpp"
#include "claw/tensor.hpp"
#include "claw/types.hpp"

namespace claw {

// Per-weight Gaussian prior / frozen posterior for mean-field layers.
struct MfPrior {
  std::vector<double> w_mean, w_var;  // [in*out]
  std::vector<double> b_mean, b_var;  // [out]
};

struct MfSnapshot {
  std::vector<MfPrior> hidden;
  std::map<int, MfPrior> heads;
};

// Mean-field Gaussian dense layer: per-weight mean plus a softplus-
// parameterized standard deviation.
class MeanFieldLayer {
 public:
  MeanFieldLayer(std::size_t in, std::size_t out, Activation act, Rng& rng);

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

  // eps_w [in, out] and eps_b [out] select one weight draw; both undefined
  // gives the mean forward.
  Tensor forward(const Tensor& x, const Tensor& eps_w = {}, const Tensor& eps_b = {}) const;

  // Gaussian KL against `prev`; nullptr means the standard-normal prior.
  Tensor kl(const MfPrior* prev) const;

  MfPrior prior() const;  // current (mu, sigma^2)
  std::vector<Tensor*> trainable() { return {&w_mu_, &w_rho_, &b_mu_, &b_rho_}; }
  MeanFieldLayer clone() const;

  Tensor& w_mu() { return w_mu_; }
  Tensor& w_rho() { return w_rho_; }
  Tensor& b_mu() { return b_mu_; }
  Tensor& b_rho() { return b_rho_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Activation act_ = Activation::relu;
  Tensor w_mu_, w_rho_;  // [in, out]
  Tensor b_mu_, b_rho_;  // [out]
};

class MeanFieldModel {
 public:
  MeanFieldModel(std::size_t input_dim, std::vector<std::size_t> hidden_widths, HeadMode head_mode,
                 std::uint64_t init_seed);

  std::size_t input_dim() const { return input_dim_; }
  HeadMode head_mode() const { return head_mode_; }
  std::size_t depth() const { return hidden_.size() + 1; }
  int head_key(int task) const { return head_mode_ == HeadMode::multi ? task : 0; }
  bool has_head(int task) const { return heads_.count(head_key(task)) > 0; }
  void ensure_head(int task, std::size_t classes);
  MeanFieldLayer& head(int task);

  std::vector<MeanFieldLayer>& hidden() { return hidden_; }

  // eps empty -> mean forward; otherwise one (eps_w, eps_b) pair per layer.
  Tensor forward(const Tensor& x, int task,
                 const std::vector<std::pair<Tensor, Tensor>>& eps = {}) const;

  Tensor kl(const MfSnapshot* prev, int task) const;
  std::vector<Tensor*> trainable(int task);
  MfSnapshot snapshot() const;
  MeanFieldModel clone() const;

 private:
  std::size_t input_dim_ = 0;
  HeadMode head_mode_ = HeadMode::single;
  std::uint64_t init_seed_ = 0;
  std::vector<MeanFieldLayer> hidden_;
  std::map<int, MeanFieldLayer> heads_;
};

// Plain dense layer for the deterministic baselines.
class DenseLayer {
 public:
  DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::vector<Tensor*> trainable() { return {&w_, &b_}; }
  DenseLayer clone() const;

  Tensor& w() { return w_; }
  Tensor& b() { return b_; }
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Activation act_ = Activation::relu;
  Tensor w_, b_;
};

class DeterministicModel {
 public:
  DeterministicModel(std::size_t input_dim, std::vector<std::size_t> hidden_widths,
                     HeadMode head_mode, std::uint64_t init_seed);

  std::size_t input_dim() const { return input_dim_; }
  HeadMode head_mode() const { return head_mode_; }
  int head_key(int task) const { return head_mode_ == HeadMode::multi ? task : 0; }
  bool has_head(int task) const { return heads_.count(head_key(task)) > 0; }
  void ensure_head(int task, std::size_t classes);
  DenseLayer& head(int task);
  std::vector<DenseLayer>& hidden() { return hidden_; }

  Tensor forward(const Tensor& x, int task) const;
  std::vector<Tensor*> trainable(int task);
  // Stable parameter identities for anchor-based penalties.
  std::vector<std::pair<std::string, Tensor*>> named_trainable(int task);

 private:
  std::size_t input_dim_ = 0;
  HeadMode head_mode_ = HeadMode::single;
  std::uint64_t init_seed_ = 0;
  std::vector<DenseLayer> hidden_;
  std::map<int, DenseLayer> heads_;
};

}  // namespace claw
