#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "claw/types.hpp"

namespace claw {

struct LabeledDataset {
  std::size_t n = 0, d = 0;
  std::size_t num_classes = 0;
  std::vector<double> inputs;  // [n*d] row-major, scaled to [0,1]
  std::vector<int> labels;     // [n], in [0, num_classes)
  std::vector<std::string> class_names;

  bool empty() const { return n == 0; }
  const double* row(std::size_t i) const { return inputs.data() + i * d; }
};

struct TaskTriple {
  LabeledDataset train, val, test;
};

struct TaskSequence {
  std::string name;
  HeadMode head_mode_hint = HeadMode::single;
  std::vector<TaskTriple> tasks;
};

// IDX ingestion (big-endian headers, magic 0x00000803 for images and
// 0x00000801 for labels). Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Deterministic 60/20/20 partition of `ds` under `seed`.
TaskTriple split_train_val_test(const LabeledDataset& ds, std::uint64_t seed);

// Seeded subsample without replacement; m >= n returns the dataset unchanged.
LabeledDataset subsample(const LabeledDataset& ds, std::size_t m, std::uint64_t seed);

// Task 1 is the identity; tasks 2..T apply a per-task seeded pixel
// permutation, shared by that task's train/val/test splits.
TaskSequence permuted_tasks(const LabeledDataset& base, std::size_t T, std::uint64_t seed);

// One binary task per label pair, relabeled {0,1}.
TaskSequence split_tasks(const LabeledDataset& base, const std::vector<std::pair<int, int>>& pairs,
                         std::uint64_t seed);

// Two spherical Gaussian blobs per task with class means separated by
// margin * decay^(t-1) * sqrt(d); inputs min-max rescaled into [0,1].
TaskSequence synthetic_tasks(std::size_t T, std::size_t d, std::size_t n, double margin,
                             std::uint64_t seed, double margin_decay = 1.0);

}  // namespace claw
