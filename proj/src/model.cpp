#include "claw/model.hpp"

#include <stdexcept>
#include <string>

namespace claw {

ClawModel::ClawModel(std::size_t input_dim, std::vector<std::size_t> hidden_widths,
                     HeadMode head_mode, AdaptMode adapt_mode, std::uint64_t init_seed)
    : input_dim_(input_dim), head_mode_(head_mode), adapt_mode_(adapt_mode),
      init_seed_(init_seed) {
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    Rng rng(derive_seed(init_seed_, 100 + i));
    hidden_.emplace_back(prev, hidden_widths[i], Activation::relu, adapt_mode_, rng);
    prev = hidden_widths[i];
  }
}

ClawModel ClawModel::from_snapshot(const PosteriorSnapshot& snap) {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;
  AdaptMode mode = AdaptMode::stochastic;
  if (!snap.hidden.empty()) {
    input_dim = snap.hidden.front().in;
    mode = snap.hidden.front().mode;
    for (const auto& ls : snap.hidden) widths.push_back(ls.out);
  } else if (!snap.heads.empty()) {
    input_dim = snap.heads.begin()->second.in;
    mode = snap.heads.begin()->second.mode;
  }
  ClawModel model(input_dim, widths, snap.head_mode, mode, 0);
  model.restore(snap);
  return model;
}

void ClawModel::ensure_head(int task, std::size_t classes) {
  const int key = head_key(task);
  auto it = heads_.find(key);
  if (it != heads_.end()) {
    if (it->second.out() < classes) {
      throw std::invalid_argument("head " + std::to_string(key) + " has " +
                                  std::to_string(it->second.out()) + " outputs, task needs " +
                                  std::to_string(classes));
    }
    return;
  }
  const std::size_t in = hidden_.empty() ? input_dim_ : hidden_.back().out();
  Rng rng(derive_seed(init_seed_, 1000 + static_cast<std::uint64_t>(key)));
  heads_.emplace(key, AdaptiveVariationalLayer(in, classes, Activation::identity, adapt_mode_, rng));
}

AdaptiveVariationalLayer& ClawModel::head(int task) {
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) {
    throw std::out_of_range("no head for task " + std::to_string(task));
  }
  return it->second;
}

const AdaptiveVariationalLayer& ClawModel::head(int task) const {
  auto it = heads_.find(head_key(task));
  if (it == heads_.end()) {
    throw std::out_of_range("no head for task " + std::to_string(task));
  }
  return it->second;
}

Tensor ClawModel::forward(const Tensor& x, int task, const std::vector<Tensor>& eps) const {
  if (!eps.empty() && eps.size() != depth()) {
    throw std::invalid_argument("forward: " + std::to_string(eps.size()) + " noise tensors for " +
                                std::to_string(depth()) + " layers");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    h = hidden_[i].forward(h, eps.empty() ? Tensor{} : eps[i]);
  }
  return head(task).forward(h, eps.empty() ? Tensor{} : eps.back());
}

Tensor ClawModel::kl(const PosteriorSnapshot* prev, int task) const {
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    if (prev && i < prev->hidden.size()) {
      total = add(total, hidden_[i].kl_to_previous_posterior(prev->hidden[i]));
    } else {
      total = add(total, hidden_[i].kl_to_logscale_prior());
    }
  }
  const int key = head_key(task);
  const AdaptiveVariationalLayer& hd = head(task);
  if (prev && prev->heads.count(key)) {
    total = add(total, hd.kl_to_previous_posterior(prev->heads.at(key)));
  } else {
    total = add(total, hd.kl_to_logscale_prior());
  }
  return total;
}

std::vector<Tensor*> ClawModel::trainable(int task) {
  std::vector<Tensor*> params;
  for (auto& layer : hidden_) {
    for (Tensor* t : layer.trainable()) params.push_back(t);
  }
  for (Tensor* t : head(task).trainable()) params.push_back(t);
  return params;
}

void ClawModel::project(int task) {
  for (auto& layer : hidden_) layer.project();
  head(task).project();
}

PosteriorSnapshot ClawModel::snapshot() const {
  PosteriorSnapshot snap;
  snap.head_mode = head_mode_;
  for (const auto& layer : hidden_) snap.hidden.push_back(layer.snapshot());
  for (const auto& [key, layer] : heads_) snap.heads.emplace(key, layer.snapshot());
  return snap;
}

void ClawModel::restore(const PosteriorSnapshot& snap) {
  if (snap.hidden.size() != hidden_.size()) {
    throw ShapeError("restore: snapshot has " + std::to_string(snap.hidden.size()) +
                     " hidden layers, model has " + std::to_string(hidden_.size()));
  }
  head_mode_ = snap.head_mode;
  for (std::size_t i = 0; i < hidden_.size(); ++i) hidden_[i].restore(snap.hidden[i]);
  for (const auto& [key, ls] : snap.heads) {
    auto it = heads_.find(key);
    if (it != heads_.end()) {
      it->second.restore(ls);
    } else {
      heads_.emplace(key, AdaptiveVariationalLayer::from_snapshot(ls));
    }
  }
}

}  // namespace claw
