#include "claw/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "claw/errors.hpp"

namespace claw {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0)) throw ConfigError(std::string("config: ") + key + " must be positive");
  };
  positive(epochs, "epochs");
  positive(minibatch, "minibatch");
  positive(mc_samples, "mc_samples");
  positive(lr, "learning_rate");
  positive(beta1, "beta1");
  positive(beta2, "beta2");
  positive(predict_samples, "predict_samples");
  positive(coreset_epochs, "coreset_epochs");
  if (omega1 < 0.0) throw ConfigError("config: omega1 must be non-negative");
  if (omega2 < 0.0) throw ConfigError("config: omega2 must be non-negative");
  if (ewc_lambda < 0.0) throw ConfigError("config: lambda must be non-negative");
}

const TaskAdaptationStore::Entry& TaskAdaptationStore::get(int task) const {
  auto it = by_task_.find(task);
  if (it == by_task_.end()) {
    throw std::out_of_range("adaptation store: unknown task_id " + std::to_string(task));
  }
  return it->second;
}

double Trainer::evaluate(const LabeledDataset& test, int task_id) {
  Prediction pred = predict_proba(test, task_id);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.n; ++i) {
    const double* row = pred.probs.data() + i * pred.classes;
    std::size_t best = 0;
    for (std::size_t j = 1; j < pred.classes; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.n);
}

namespace {

std::pair<Tensor, std::vector<int>> make_batch(const LabeledDataset& ds,
                                               const std::vector<std::size_t>& idx,
                                               std::size_t begin, std::size_t end) {
  const std::size_t b = end - begin;
  std::vector<double> x(b * ds.d);
  std::vector<int> y(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t src = idx[begin + i];
    std::copy_n(ds.row(src), ds.d, x.begin() + i * ds.d);
    y[i] = ds.labels[src];
  }
  return {Tensor::from(std::move(x), {b, ds.d}), std::move(y)};
}

Tensor make_inputs(const LabeledDataset& ds, std::size_t begin, std::size_t end) {
  const std::size_t b = end - begin;
  std::vector<double> x(ds.inputs.begin() + begin * ds.d, ds.inputs.begin() + end * ds.d);
  return Tensor::from(std::move(x), {b, ds.d});
}

std::size_t task_classes(const LabeledDataset& ds) {
  if (ds.num_classes > 0) return ds.num_classes;
  int mx = 0;
  for (int l : ds.labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx) + 1;
}

// Temporarily installs per-task adaptation values; restores on destruction.
class AdaptationGuard {
 public:
  AdaptationGuard(std::vector<AdaptiveVariationalLayer*> layers,
                  const TaskAdaptationStore::Entry* entry)
      : layers_(std::move(layers)) {
    if (!entry) return;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      saved_a_.push_back(layers_[i]->a().values());
      saved_s_.push_back(layers_[i]->s().values());
      layers_[i]->a().values() = entry->a[i];
      layers_[i]->s().values() = entry->s[i];
    }
  }

  ~AdaptationGuard() {
    for (std::size_t i = 0; i < saved_a_.size(); ++i) {
      layers_[i]->a().values() = saved_a_[i];
      layers_[i]->s().values() = saved_s_[i];
    }
  }

 private:
  std::vector<AdaptiveVariationalLayer*> layers_;
  std::vector<std::vector<double>> saved_a_, saved_s_;
};

}  // namespace

// ---------------------------------------------------------------- ClawTrainer

ClawTrainer::ClawTrainer(const TrainConfig& cfg, HeadMode head_mode, std::size_t input_dim,
                         std::vector<std::size_t> hidden_widths)
    : cfg_(cfg),
      model_(input_dim, std::move(hidden_widths), head_mode,
             cfg.ablation == Ablation::always_adapt  ? AdaptMode::always
             : cfg.ablation == Ablation::never_adapt ? AdaptMode::never
                                                     : AdaptMode::stochastic,
             derive_seed(cfg.seed, 11)) {
  cfg_.validate();
  for (const auto& layer : model_.hidden()) general_s_hidden_.push_back(layer.s().values());
}

std::vector<AdaptiveVariationalLayer*> ClawTrainer::task_layers(int task) {
  std::vector<AdaptiveVariationalLayer*> layers;
  for (auto& l : model_.hidden()) layers.push_back(&l);
  layers.push_back(&model_.head(task));
  return layers;
}

std::vector<Tensor> ClawTrainer::draw_eps(int task, Rng& rng) {
  std::vector<Tensor> eps;
  for (const auto& l : model_.hidden()) {
    eps.push_back(Tensor::from(rng.normal_vector(l.out()), {l.out()}));
  }
  const auto& hd = model_.head(task);
  eps.push_back(Tensor::from(rng.normal_vector(hd.out()), {hd.out()}));
  return eps;
}

Tensor ClawTrainer::elbo(const Tensor& x, const std::vector<int>& labels,
                         std::size_t dataset_size, int mc_samples, int task, Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  Tensor ce_acc;
  for (int e = 0; e < mc_samples; ++e) {
    Tensor logits = model_.forward(x, task, draw_eps(task, rng));
    Tensor ce = softmax_cross_entropy(logits, labels);
    ce_acc = (e == 0) ? ce : add(ce_acc, ce);
  }
  Tensor ce_mean = (mc_samples > 1) ? div(ce_acc, static_cast<double>(mc_samples)) : ce_acc;
  Tensor kl = model_.kl(prev_ ? &*prev_ : nullptr, task);
  return add(kl, mul(ce_mean, static_cast<double>(dataset_size)));
}

void ClawTrainer::observe_task(const LabeledDataset& train) {
  if (train.empty()) throw std::invalid_argument("observe_task: empty dataset");
  const int task = ++tasks_seen_;
  model_.ensure_head(task, task_classes(train));
  const int key = model_.head_key(task);
  if (!general_s_heads_.count(key)) {
    general_s_heads_[key] = model_.head(task).s().values();
  }

  // Warm-start every live s from its general value.
  for (std::size_t i = 0; i < model_.hidden().size(); ++i) {
    model_.hidden()[i].s().values() = general_s_hidden_[i];
  }
  model_.head(task).s().values() = general_s_heads_[key];

  AdamOptimizer opt({cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps});
  std::vector<Tensor*> params = model_.trainable(task);
  Rng shuffle_rng(derive_seed(cfg_.seed, 0xA110 + static_cast<std::uint64_t>(task)));
  Rng eps_rng(derive_seed(cfg_.seed, 0xE450 + static_cast<std::uint64_t>(task)));

  // The two-half meta update of s runs at the end of every epoch: the
  // task-specific values descend from the live gradients while the general
  // values take their own smaller step, warm-starting the next task. The
  // last epoch's task-specific values are what the store keeps.
  Rng meta_rng(derive_seed(cfg_.seed, 0x3E7A + static_cast<std::uint64_t>(task)));
  std::vector<std::vector<double>> s_task, s_general;

  const std::size_t N = train.n;
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg_.minibatch), N);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<std::size_t> perm = shuffle_rng.permutation(N);
    for (std::size_t begin = 0; begin < N; begin += B, ++step) {
      const std::size_t end = std::min(begin + B, N);
      auto [x, y] = make_batch(train, perm, begin, end);
      Tensor loss = elbo(x, y, N, cfg_.mc_samples, task, eps_rng);
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError(step, "claw: non-finite loss at step " + std::to_string(step));
      }
      opt.zero_grad(params);
      backward(loss);
      opt.step(params);
      model_.project(task);
    }
    if (cfg_.ablation != Ablation::fixed_s) {
      std::tie(s_task, s_general) = meta_update_s(train, cfg_.omega1, cfg_.omega2, meta_rng);
      // Training continues from the task-specific values; the general values
      // are re-installed as the warm start when the next task begins.
    }
  }

  if (cfg_.ablation != Ablation::fixed_s) {
    auto layers = task_layers(task);
    TaskAdaptationStore::Entry entry;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      entry.a.push_back(layers[i]->a().values());
      entry.s.push_back(s_task[i]);
      if (i + 1 == layers.size()) {
        general_s_heads_[key] = s_general[i];
      } else {
        general_s_hidden_[i] = s_general[i];
      }
    }
    store_.put(task, std::move(entry));
  }

  prev_ = model_.snapshot();
}

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>
ClawTrainer::meta_update_s(const LabeledDataset& train, double omega1, double omega2, Rng& rng) {
  const std::size_t N = train.n;
  if (N < 2) throw std::invalid_argument("meta_update_s: need at least 2 examples");
  const int task = tasks_seen_;
  auto layers = task_layers(task);

  std::vector<std::size_t> perm = rng.permutation(N);
  const std::size_t half = (N + 1) / 2;

  // Gradient of the summed cross-entropy over a slice of the shuffled data,
  // taken with the deterministic (mean) forward.
  auto grad_ce_sum = [&](std::size_t begin, std::size_t end) {
    for (auto* l : layers) l->s().zero_grad();
    const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg_.minibatch),
                                                end - begin);
    for (std::size_t lo = begin; lo < end; lo += B) {
      const std::size_t hi = std::min(lo + B, end);
      auto [x, y] = make_batch(train, perm, lo, hi);
      Tensor ce_sum = mul(softmax_cross_entropy(model_.forward(x, task), y),
                          static_cast<double>(hi - lo));
      backward(ce_sum);
    }
    std::vector<std::vector<double>> grads;
    for (auto* l : layers) grads.push_back(l->s().grad());
    return grads;
  };

  std::vector<std::vector<double>> s_old;
  for (auto* l : layers) s_old.push_back(l->s().values());

  const auto g1 = grad_ce_sum(0, half);
  std::vector<std::vector<double>> s_task = s_old;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t j = 0; j < s_task[li].size(); ++j) {
      s_task[li][j] =
          std::clamp(s_old[li][j] - (2.0 * omega1 / N) * g1[li][j], kSMin, kSMax);
    }
    layers[li]->s().values() = s_task[li];
  }

  const auto g2 = grad_ce_sum(half, N);
  std::vector<std::vector<double>> s_general = s_old;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t j = 0; j < s_general[li].size(); ++j) {
      s_general[li][j] =
          std::clamp(s_old[li][j] - (2.0 * omega2 / N) * g2[li][j], kSMin, kSMax);
    }
  }
  // Live layers stay at the task-specific values.
  return {std::move(s_task), std::move(s_general)};
}

Prediction ClawTrainer::predict_proba(const LabeledDataset& ds, int task_id) {
  const TaskAdaptationStore::Entry* entry = nullptr;
  if (cfg_.ablation != Ablation::fixed_s) {
    entry = &store_.get(task_id);  // throws for unknown tasks
  } else if (!model_.has_head(task_id)) {
    throw std::out_of_range("predict: unknown task_id " + std::to_string(task_id));
  }
  AdaptationGuard guard(task_layers(task_id), entry);

  const auto& hd = model_.head(task_id);
  Prediction pred;
  pred.classes = hd.out();
  pred.probs.resize(ds.n * pred.classes);

  Rng rng(derive_seed(cfg_.seed, 0xEAA0 + static_cast<std::uint64_t>(task_id)));
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < ds.n; begin += chunk) {
    const std::size_t end = std::min(begin + chunk, ds.n);
    Tensor x = make_inputs(ds, begin, end);
    std::vector<double> probs((end - begin) * pred.classes, 0.0);
    if (cfg_.predict_mode == PredictMode::mean) {
      probs = softmax_rows(model_.forward(x, task_id));
    } else {
      for (int s = 0; s < cfg_.predict_samples; ++s) {
        auto draw = softmax_rows(model_.forward(x, task_id, draw_eps(task_id, rng)));
        for (std::size_t i = 0; i < probs.size(); ++i) probs[i] += draw[i];
      }
      for (double& v : probs) v /= cfg_.predict_samples;
    }
    std::copy(probs.begin(), probs.end(), pred.probs.begin() + begin * pred.classes);
  }
  return pred;
}

// ----------------------------------------------------------------- VclTrainer

VclTrainer::VclTrainer(const TrainConfig& cfg, HeadMode head_mode, std::size_t input_dim,
                       std::vector<std::size_t> hidden_widths, bool use_coreset)
    : cfg_(cfg), use_coreset_(use_coreset),
      model_(input_dim, std::move(hidden_widths), head_mode, derive_seed(cfg.seed, 12)) {
  cfg_.validate();
}

Tensor VclTrainer::elbo(MeanFieldModel& model, const MfSnapshot* prev, const Tensor& x,
                        const std::vector<int>& labels, std::size_t dataset_size, int mc_samples,
                        int task, Rng& rng) {
  if (mc_samples < 1) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  Tensor ce_acc;
  for (int e = 0; e < mc_samples; ++e) {
    std::vector<std::pair<Tensor, Tensor>> eps;
    for (auto& l : model.hidden()) {
      eps.emplace_back(Tensor::from(rng.normal_vector(l.in() * l.out()), {l.in(), l.out()}),
                       Tensor::from(rng.normal_vector(l.out()), {l.out()}));
    }
    auto& hd = model.head(task);
    eps.emplace_back(Tensor::from(rng.normal_vector(hd.in() * hd.out()), {hd.in(), hd.out()}),
                     Tensor::from(rng.normal_vector(hd.out()), {hd.out()}));
    Tensor ce = softmax_cross_entropy(model.forward(x, task, eps), labels);
    ce_acc = (e == 0) ? ce : add(ce_acc, ce);
  }
  Tensor ce_mean = (mc_samples > 1) ? div(ce_acc, static_cast<double>(mc_samples)) : ce_acc;
  return add(model.kl(prev, task), mul(ce_mean, static_cast<double>(dataset_size)));
}

void VclTrainer::train_model(MeanFieldModel& model, const MfSnapshot* prev,
                             const LabeledDataset& train, int task, int epochs, Rng& shuffle_rng,
                             Rng& eps_rng) {
  AdamOptimizer opt({cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps});
  std::vector<Tensor*> params = model.trainable(task);
  const std::size_t N = train.n;
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg_.minibatch), N);
  std::size_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> perm = shuffle_rng.permutation(N);
    for (std::size_t begin = 0; begin < N; begin += B, ++step) {
      const std::size_t end = std::min(begin + B, N);
      auto [x, y] = make_batch(train, perm, begin, end);
      Tensor loss = elbo(model, prev, x, y, N, cfg_.mc_samples, task, eps_rng);
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError(step, "vcl: non-finite loss at step " + std::to_string(step));
      }
      opt.zero_grad(params);
      backward(loss);
      opt.step(params);
    }
  }
}

void VclTrainer::observe_task(const LabeledDataset& train) {
  if (train.empty()) throw std::invalid_argument("observe_task: empty dataset");
  const int task = ++tasks_seen_;
  model_.ensure_head(task, task_classes(train));

  LabeledDataset non_coreset = train;
  if (use_coreset_) {
    const std::size_t K = std::min<std::size_t>(cfg_.coreset_size, train.n);
    auto picks = kcenter_coreset(train.inputs, train.n, train.d, K);
    std::vector<bool> picked(train.n, false);
    CoresetPart part;
    part.task = task;
    part.data.d = train.d;
    part.data.num_classes = task_classes(train);
    for (std::size_t idx : picks) {
      picked[idx] = true;
      part.data.labels.push_back(train.labels[idx]);
      part.data.inputs.insert(part.data.inputs.end(), train.row(idx), train.row(idx) + train.d);
    }
    part.data.n = part.data.labels.size();
    coreset_.push_back(std::move(part));

    LabeledDataset rest;
    rest.d = train.d;
    rest.num_classes = train.num_classes;
    for (std::size_t i = 0; i < train.n; ++i) {
      if (picked[i]) continue;
      rest.labels.push_back(train.labels[i]);
      rest.inputs.insert(rest.inputs.end(), train.row(i), train.row(i) + train.d);
    }
    rest.n = rest.labels.size();
    if (rest.n > 0) non_coreset = std::move(rest);
  }

  Rng shuffle_rng(derive_seed(cfg_.seed, 0xA220 + static_cast<std::uint64_t>(task)));
  Rng eps_rng(derive_seed(cfg_.seed, 0xE460 + static_cast<std::uint64_t>(task)));
  train_model(model_, prev_ ? &*prev_ : nullptr, non_coreset, task, cfg_.epochs, shuffle_rng,
              eps_rng);
  prev_ = model_.snapshot();
}

std::vector<VclTrainer::CoresetPart> VclTrainer::trimmed_coreset() const {
  std::vector<CoresetPart> parts;
  if (coreset_.empty()) return parts;
  const std::size_t per_task =
      std::max<std::size_t>(1, cfg_.coreset_size / coreset_.size());
  for (const auto& part : coreset_) {
    CoresetPart trimmed;
    trimmed.task = part.task;
    const std::size_t keep = std::min(per_task, part.data.n);
    trimmed.data.d = part.data.d;
    trimmed.data.n = keep;
    trimmed.data.num_classes = part.data.num_classes;
    trimmed.data.labels.assign(part.data.labels.begin(), part.data.labels.begin() + keep);
    trimmed.data.inputs.assign(part.data.inputs.begin(),
                               part.data.inputs.begin() + keep * part.data.d);
    parts.push_back(std::move(trimmed));
  }
  return parts;
}

Prediction VclTrainer::predict_proba(const LabeledDataset& ds, int task_id) {
  if (!model_.has_head(task_id)) {
    throw std::out_of_range("predict: unknown task_id " + std::to_string(task_id));
  }

  MeanFieldModel* predictor = &model_;
  MeanFieldModel finetuned(0, {}, model_.head_mode(), 0);
  if (use_coreset_ && !coreset_.empty()) {
    // Propagate-then-finetune: refine a throwaway copy on the accumulated
    // coreset, anchored to the current posterior; predict from the copy.
    finetuned = model_.clone();
    MfSnapshot anchor = model_.snapshot();
    Rng shuffle_rng(derive_seed(cfg_.seed, 0xC0DE));
    Rng eps_rng(derive_seed(cfg_.seed, 0xC0DF));
    for (const auto& part : trimmed_coreset()) {
      train_model(finetuned, &anchor, part.data, part.task, cfg_.coreset_epochs, shuffle_rng,
                  eps_rng);
    }
    predictor = &finetuned;
  }

  auto& hd = predictor->head(task_id);
  Prediction pred;
  pred.classes = hd.out();
  pred.probs.resize(ds.n * pred.classes);

  Rng rng(derive_seed(cfg_.seed, 0xEBB0 + static_cast<std::uint64_t>(task_id)));
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < ds.n; begin += chunk) {
    const std::size_t end = std::min(begin + chunk, ds.n);
    Tensor x = make_inputs(ds, begin, end);
    std::vector<double> probs((end - begin) * pred.classes, 0.0);
    if (cfg_.predict_mode == PredictMode::mean) {
      probs = softmax_rows(predictor->forward(x, task_id));
    } else {
      for (int s = 0; s < cfg_.predict_samples; ++s) {
        std::vector<std::pair<Tensor, Tensor>> eps;
        for (auto& l : predictor->hidden()) {
          eps.emplace_back(Tensor::from(rng.normal_vector(l.in() * l.out()), {l.in(), l.out()}),
                           Tensor::from(rng.normal_vector(l.out()), {l.out()}));
        }
        eps.emplace_back(Tensor::from(rng.normal_vector(hd.in() * hd.out()), {hd.in(), hd.out()}),
                         Tensor::from(rng.normal_vector(hd.out()), {hd.out()}));
        auto draw = softmax_rows(predictor->forward(x, task_id, eps));
        for (std::size_t i = 0; i < probs.size(); ++i) probs[i] += draw[i];
      }
      for (double& v : probs) v /= cfg_.predict_samples;
    }
    std::copy(probs.begin(), probs.end(), pred.probs.begin() + begin * pred.classes);
  }
  return pred;
}

// ------------------------------------------------------- DeterministicTrainer

DeterministicTrainer::DeterministicTrainer(const TrainConfig& cfg, HeadMode head_mode,
                                           std::size_t input_dim,
                                           std::vector<std::size_t> hidden_widths, bool ewc)
    : cfg_(cfg), ewc_(ewc),
      model_(input_dim, std::move(hidden_widths), head_mode, derive_seed(cfg.seed, 13)) {
  cfg_.validate();
}

void DeterministicTrainer::observe_task(const LabeledDataset& train) {
  if (train.empty()) throw std::invalid_argument("observe_task: empty dataset");
  const int task = ++tasks_seen_;
  model_.ensure_head(task, task_classes(train));

  AdamOptimizer opt({cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps});
  std::vector<Tensor*> params = model_.trainable(task);
  auto named = model_.named_trainable(task);
  Rng shuffle_rng(derive_seed(cfg_.seed, 0xA330 + static_cast<std::uint64_t>(task)));

  const bool penalized = ewc_ && cfg_.ewc_lambda > 0.0 && !anchors_.empty();
  const std::size_t N = train.n;
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg_.minibatch), N);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<std::size_t> perm = shuffle_rng.permutation(N);
    for (std::size_t begin = 0; begin < N; begin += B, ++step) {
      const std::size_t end = std::min(begin + B, N);
      auto [x, y] = make_batch(train, perm, begin, end);
      Tensor loss = softmax_cross_entropy(model_.forward(x, task), y);
      if (penalized) {
        Tensor penalty = Tensor::scalar(0.0);
        for (const auto& anchor : anchors_) {
          for (auto& [name, param] : named) {
            auto it = anchor.theta.find(name);
            if (it == anchor.theta.end()) continue;
            Tensor theta_star = Tensor::from(it->second, param->shape());
            Tensor fisher = Tensor::from(anchor.fisher.at(name), param->shape());
            penalty = add(penalty, sum(mul(fisher, square(sub(*param, theta_star)))));
          }
        }
        loss = add(loss, mul(penalty, 0.5 * cfg_.ewc_lambda));
      }
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError(step, name() + ": non-finite loss at step " +
                                              std::to_string(step));
      }
      opt.zero_grad(params);
      backward(loss);
      opt.step(params);
    }
  }

  if (ewc_) {
    // Diagonal Fisher at convergence: mean squared gradient of the
    // log-likelihood of labels sampled from the model's own predictive.
    Anchor anchor;
    for (auto& [name, param] : named) {
      anchor.theta[name] = param->values();
      anchor.fisher[name].assign(param->size(), 0.0);
    }
    Rng fisher_rng(derive_seed(cfg_.seed, 0xF150 + static_cast<std::uint64_t>(task)));
    for (std::size_t i = 0; i < train.n; ++i) {
      Tensor x = Tensor::from(std::vector<double>(train.row(i), train.row(i) + train.d),
                              {1, train.d});
      Tensor logits = model_.forward(x, task);
      std::vector<double> probs = softmax_rows(logits);
      const int sampled = static_cast<int>(fisher_rng.categorical(probs));
      Tensor ll = softmax_cross_entropy(logits, {sampled});
      AdamOptimizer::zero_grad(params);
      backward(ll);
      for (auto& [name, param] : named) {
        const auto& g = param->grad();
        auto& f = anchor.fisher[name];
        for (std::size_t k = 0; k < g.size(); ++k) f[k] += g[k] * g[k];
      }
    }
    for (auto& [name, f] : anchor.fisher) {
      for (double& v : f) v /= static_cast<double>(train.n);
    }
    anchors_.push_back(std::move(anchor));
  }
}

Prediction DeterministicTrainer::predict_proba(const LabeledDataset& ds, int task_id) {
  if (!model_.has_head(task_id)) {
    throw std::out_of_range("predict: unknown task_id " + std::to_string(task_id));
  }
  auto& hd = model_.head(task_id);
  Prediction pred;
  pred.classes = hd.out();
  pred.probs.resize(ds.n * pred.classes);
  const std::size_t chunk = 512;
  for (std::size_t begin = 0; begin < ds.n; begin += chunk) {
    const std::size_t end = std::min(begin + chunk, ds.n);
    Tensor x = make_inputs(ds, begin, end);
    auto probs = softmax_rows(model_.forward(x, task_id));
    std::copy(probs.begin(), probs.end(), pred.probs.begin() + begin * pred.classes);
  }
  return pred;
}

// -------------------------------------------------------------------- kcenter

std::vector<std::size_t> kcenter_coreset(const std::vector<double>& X, std::size_t n,
                                         std::size_t d, std::size_t K) {
  if (K > n) {
    throw std::invalid_argument("kcenter_coreset: K=" + std::to_string(K) + " exceeds n=" +
                                std::to_string(n));
  }
  std::vector<std::size_t> picks;
  if (K == 0) return picks;

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += X[i * d + j];
  }
  for (double& v : mean) v /= static_cast<double>(n);

  auto dist2_to = [&](std::size_t i, const double* point) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = X[i * d + j] - point[j];
      acc += diff * diff;
    }
    return acc;
  };

  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dist = dist2_to(i, mean.data());
    if (dist > best) {
      best = dist;
      first = i;
    }
  }
  picks.push_back(first);

  std::vector<double> min_dist2(n);
  for (std::size_t i = 0; i < n; ++i) min_dist2[i] = dist2_to(i, X.data() + first * d);

  while (picks.size() < K) {
    std::size_t next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_dist2[i] > far) {
        far = min_dist2[i];
        next = i;
      }
    }
    picks.push_back(next);
    for (std::size_t i = 0; i < n; ++i) {
      min_dist2[i] = std::min(min_dist2[i], dist2_to(i, X.data() + next * d));
    }
  }
  return picks;
}

std::unique_ptr<Trainer> make_trainer(const std::string& method, const TrainConfig& cfg,
                                      HeadMode head_mode, std::size_t input_dim,
                                      const std::vector<std::size_t>& hidden_widths) {
  if (method == "claw") {
    return std::make_unique<ClawTrainer>(cfg, head_mode, input_dim, hidden_widths);
  }
  if (method == "vcl") {
    return std::make_unique<VclTrainer>(cfg, head_mode, input_dim, hidden_widths, false);
  }
  if (method == "vcl-coreset") {
    return std::make_unique<VclTrainer>(cfg, head_mode, input_dim, hidden_widths, true);
  }
  if (method == "ewc") {
    return std::make_unique<DeterministicTrainer>(cfg, head_mode, input_dim, hidden_widths, true);
  }
  if (method == "finetune") {
    return std::make_unique<DeterministicTrainer>(cfg, head_mode, input_dim, hidden_widths, false);
  }
  throw ConfigError("config: unknown method \"" + method + "\"");
}

}  // namespace claw
