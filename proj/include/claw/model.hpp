#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "claw/adaptive_layer.hpp"
#include "claw/snapshot.hpp"

namespace claw {

// Adaptive network trained over a task stream. Hidden layers are shared; the
// output layer is either common to all tasks (single) or created per task at
// first exposure (multi). Heads are adaptive layers like the hidden ones,
// with identity activation.
class ClawModel {
 public:
  ClawModel(std::size_t input_dim, std::vector<std::size_t> hidden_widths, HeadMode head_mode,
            AdaptMode adapt_mode, std::uint64_t init_seed);

  static ClawModel from_snapshot(const PosteriorSnapshot& snap);

  std::size_t input_dim() const { return input_dim_; }
  HeadMode head_mode() const { return head_mode_; }
  AdaptMode adapt_mode() const { return adapt_mode_; }
  std::size_t depth() const { return hidden_.size() + 1; }

  int head_key(int task) const { return head_mode_ == HeadMode::multi ? task : 0; }
  bool has_head(int task) const { return heads_.count(head_key(task)) > 0; }
  void ensure_head(int task, std::size_t classes);
  AdaptiveVariationalLayer& head(int task);
  const AdaptiveVariationalLayer& head(int task) const;

  std::vector<AdaptiveVariationalLayer>& hidden() { return hidden_; }
  const std::vector<AdaptiveVariationalLayer>& hidden() const { return hidden_; }

  // eps empty -> deterministic forward; otherwise one noise tensor per layer,
  // hidden layers first, the task's head last.
  Tensor forward(const Tensor& x, int task, const std::vector<Tensor>& eps = {}) const;

  // KL term of the task objective: every layer is anchored to its entry in
  // `prev` when one exists, and to the log-scale prior otherwise (first task,
  // or a head created this task).
  Tensor kl(const PosteriorSnapshot* prev, int task) const;

  std::vector<Tensor*> trainable(int task);
  void project(int task);

  PosteriorSnapshot snapshot() const;
  void restore(const PosteriorSnapshot& snap);

 private:
  std::size_t input_dim_ = 0;
  HeadMode head_mode_ = HeadMode::single;
  AdaptMode adapt_mode_ = AdaptMode::stochastic;
  std::uint64_t init_seed_ = 0;
  std::vector<AdaptiveVariationalLayer> hidden_;
  std::map<int, AdaptiveVariationalLayer> heads_;
};

}  // namespace claw
