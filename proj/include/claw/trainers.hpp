#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "claw/adam.hpp"
#include "claw/baselines.hpp"
#include "claw/data.hpp"
#include "claw/model.hpp"

namespace claw {

enum class Ablation { none, fixed_s, always_adapt, never_adapt };
enum class PredictMode { mean, sample };

struct TrainConfig {
  int epochs = 10;
  int minibatch = 128;
  int mc_samples = 1;  // E, noise draws per objective evaluation
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double omega1 = 0.05;  // meta step for the task-specific s
  double omega2 = 0.02;  // meta step for the general s
  std::uint64_t seed = 1;
  Ablation ablation = Ablation::none;
  int predict_samples = 10;  // S
  PredictMode predict_mode = PredictMode::mean;
  double ewc_lambda = 100.0;
  std::size_t coreset_size = 200;
  int coreset_epochs = 5;

  void validate() const;  // throws ConfigError on non-positive settings
};

// Per-task, per-neuron record of the adaptation values (a_t, s_t) used when
// testing on that task later; one vector per layer (hidden first, head last).
class TaskAdaptationStore {
 public:
  struct Entry {
    std::vector<std::vector<double>> a, s;
  };

  bool has(int task) const { return by_task_.count(task) > 0; }
  const Entry& get(int task) const;
  void put(int task, Entry entry) { by_task_[task] = std::move(entry); }
  std::size_t size() const { return by_task_.size(); }

 private:
  std::map<int, Entry> by_task_;
};

struct Prediction {
  std::size_t classes = 0;
  std::vector<double> probs;  // [n * classes], rows sum to 1
};

// Uniform sequential-training interface. Tasks arrive in stream order: the
// t-th observe_task call trains task t (1-based ids).
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual void observe_task(const LabeledDataset& train) = 0;
  virtual Prediction predict_proba(const LabeledDataset& ds, int task_id) = 0;
  virtual std::string name() const = 0;

  double evaluate(const LabeledDataset& test, int task_id);
  int tasks_seen() const { return tasks_seen_; }

 protected:
  int tasks_seen_ = 0;
};

class ClawTrainer : public Trainer {
 public:
  ClawTrainer(const TrainConfig& cfg, HeadMode head_mode, std::size_t input_dim,
              std::vector<std::size_t> hidden_widths);

  void observe_task(const LabeledDataset& train) override;
  Prediction predict_proba(const LabeledDataset& ds, int task_id) override;
  std::string name() const override { return "claw"; }

  // Negative ELBO of one minibatch: KL term plus the dataset-size-scaled
  // cross-entropy averaged over mc_samples noise draws.
  Tensor elbo(const Tensor& x, const std::vector<int>& labels, std::size_t dataset_size,
              int mc_samples, int task, Rng& rng);

  // Two-half meta update of the maximum-adaptation values: a task-specific
  // step from the first half, then a general-value step from the second half
  // evaluated at the task-specific point (first-order). Returns (s_t, updated
  // general s) per layer; the live layers keep s_t.
  std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> meta_update_s(
      const LabeledDataset& train, double omega1, double omega2, Rng& rng);

  ClawModel& model() { return model_; }
  TaskAdaptationStore& store() { return store_; }
  const std::optional<PosteriorSnapshot>& previous() const { return prev_; }

 private:
  std::vector<AdaptiveVariationalLayer*> task_layers(int task);
  std::vector<Tensor> draw_eps(int task, Rng& rng);

  TrainConfig cfg_;
  ClawModel model_;
  TaskAdaptationStore store_;
  std::optional<PosteriorSnapshot> prev_;
  std::vector<std::vector<double>> general_s_hidden_;
  std::map<int, std::vector<double>> general_s_heads_;
};

class VclTrainer : public Trainer {
 public:
  VclTrainer(const TrainConfig& cfg, HeadMode head_mode, std::size_t input_dim,
             std::vector<std::size_t> hidden_widths, bool use_coreset);

  void observe_task(const LabeledDataset& train) override;
  Prediction predict_proba(const LabeledDataset& ds, int task_id) override;
  std::string name() const override { return use_coreset_ ? "vcl-coreset" : "vcl"; }

  Tensor elbo(MeanFieldModel& model, const MfSnapshot* prev, const Tensor& x,
              const std::vector<int>& labels, std::size_t dataset_size, int mc_samples, int task,
              Rng& rng);

  MeanFieldModel& model() { return model_; }
  const std::optional<MfSnapshot>& previous() const { return prev_; }

 private:
  struct CoresetPart {
    int task = 0;
    LabeledDataset data;  // greedy K-center order
  };

  void train_model(MeanFieldModel& model, const MfSnapshot* prev, const LabeledDataset& train,
                   int task, int epochs, Rng& shuffle_rng, Rng& eps_rng);
  std::vector<CoresetPart> trimmed_coreset() const;

  TrainConfig cfg_;
  bool use_coreset_ = false;
  MeanFieldModel model_;
  std::optional<MfSnapshot> prev_;
  std::vector<CoresetPart> coreset_;
};

// Deterministic-network baselines: plain fine-tuning, and EWC's quadratic
// anchor penalty with a diagonal Fisher estimated at each task's end.
class DeterministicTrainer : public Trainer {
 public:
  DeterministicTrainer(const TrainConfig& cfg, HeadMode head_mode, std::size_t input_dim,
                       std::vector<std::size_t> hidden_widths, bool ewc);

  void observe_task(const LabeledDataset& train) override;
  Prediction predict_proba(const LabeledDataset& ds, int task_id) override;
  std::string name() const override { return ewc_ ? "ewc" : "finetune"; }

  DeterministicModel& model() { return model_; }

  struct Anchor {
    std::map<std::string, std::vector<double>> theta;
    std::map<std::string, std::vector<double>> fisher;
  };
  const std::vector<Anchor>& anchors() const { return anchors_; }

 private:
  TrainConfig cfg_;
  bool ewc_ = false;
  DeterministicModel model_;
  std::vector<Anchor> anchors_;
};

// Greedy K-center selection over the rows of X ([n, d] flat). The first pick
// is the point farthest from the dataset mean; each further pick maximizes
// the distance to its nearest chosen center. Euclidean metric, ties resolved
// toward the lower index.
std::vector<std::size_t> kcenter_coreset(const std::vector<double>& X, std::size_t n,
                                         std::size_t d, std::size_t K);

std::unique_ptr<Trainer> make_trainer(const std::string& method, const TrainConfig& cfg,
                                      HeadMode head_mode, std::size_t input_dim,
                                      const std::vector<std::size_t>& hidden_widths);

}  // namespace claw
