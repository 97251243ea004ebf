#include "claw/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "claw/errors.hpp"
#include "claw/rng.hpp"

namespace claw {

namespace {

std::uint32_t read_be32(std::ifstream& is, std::size_t offset, const std::string& path,
                        const char* what) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (is.gcount() != 4) {
    throw FormatError("idx: truncated " + std::string(what) + " at byte offset " +
                      std::to_string(offset) + " in " + path);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

LabeledDataset gather(const LabeledDataset& ds, const std::vector<std::size_t>& idx) {
  LabeledDataset out;
  out.d = ds.d;
  out.n = idx.size();
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  out.inputs.resize(out.n * out.d);
  out.labels.resize(out.n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(ds.row(idx[i]), ds.d, out.inputs.begin() + i * ds.d);
    out.labels[i] = ds.labels[idx[i]];
  }
  return out;
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw FormatError("idx: cannot open " + images_path);
  const std::uint32_t img_magic = read_be32(imgs, 0, images_path, "image magic");
  if (img_magic != 0x00000803u) {
    throw FormatError("idx: bad image magic 0x" + std::to_string(img_magic) +
                      " at byte offset 0 in " + images_path + " (expected 0x00000803)");
  }
  const std::uint32_t n = read_be32(imgs, 4, images_path, "image count");
  const std::uint32_t rows = read_be32(imgs, 8, images_path, "row count");
  const std::uint32_t cols = read_be32(imgs, 12, images_path, "column count");
  const std::size_t d = static_cast<std::size_t>(rows) * cols;

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw FormatError("idx: cannot open " + labels_path);
  const std::uint32_t lab_magic = read_be32(labs, 0, labels_path, "label magic");
  if (lab_magic != 0x00000801u) {
    throw FormatError("idx: bad label magic 0x" + std::to_string(lab_magic) +
                      " at byte offset 0 in " + labels_path + " (expected 0x00000801)");
  }
  const std::uint32_t n_labels = read_be32(labs, 4, labels_path, "label count");
  if (n_labels != n) {
    throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) +
                      " labels");
  }

  LabeledDataset ds;
  ds.n = n;
  ds.d = d;
  ds.inputs.resize(ds.n * ds.d);
  ds.labels.resize(ds.n);

  std::vector<unsigned char> pixel_row(d);
  for (std::size_t i = 0; i < ds.n; ++i) {
    imgs.read(reinterpret_cast<char*>(pixel_row.data()), static_cast<std::streamsize>(d));
    if (static_cast<std::size_t>(imgs.gcount()) != d) {
      throw FormatError("idx: truncated image data at byte offset " + std::to_string(16 + i * d) +
                        " in " + images_path);
    }
    for (std::size_t j = 0; j < d; ++j) ds.inputs[i * d + j] = pixel_row[j] / 255.0;
  }

  std::vector<unsigned char> raw_labels(ds.n);
  labs.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(ds.n));
  if (static_cast<std::size_t>(labs.gcount()) != ds.n) {
    throw FormatError("idx: truncated label data at byte offset 8 in " + labels_path);
  }
  int max_label = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    ds.labels[i] = raw_labels[i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

TaskTriple split_train_val_test(const LabeledDataset& ds, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5917));
  std::vector<std::size_t> perm = rng.permutation(ds.n);
  const std::size_t n_train = ds.n * 6 / 10;
  const std::size_t n_val = ds.n * 2 / 10;
  TaskTriple triple;
  triple.train = gather(ds, {perm.begin(), perm.begin() + n_train});
  triple.val = gather(ds, {perm.begin() + n_train, perm.begin() + n_train + n_val});
  triple.test = gather(ds, {perm.begin() + n_train + n_val, perm.end()});
  return triple;
}

LabeledDataset subsample(const LabeledDataset& ds, std::size_t m, std::uint64_t seed) {
  if (m >= ds.n) return ds;
  Rng rng(derive_seed(seed, 0x5AB5));
  std::vector<std::size_t> perm = rng.permutation(ds.n);
  perm.resize(m);
  return gather(ds, perm);
}

TaskSequence permuted_tasks(const LabeledDataset& base, std::size_t T, std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("permuted_tasks: T must be >= 1");
  TaskSequence seq;
  seq.name = "permuted";
  seq.head_mode_hint = HeadMode::single;
  for (std::size_t t = 1; t <= T; ++t) {
    LabeledDataset task = base;
    if (t > 1) {
      Rng rng(derive_seed(seed, 0x9E37 + t));
      std::vector<std::size_t> perm = rng.permutation(base.d);
      for (std::size_t i = 0; i < base.n; ++i) {
        const double* src = base.row(i);
        double* dst = task.inputs.data() + i * base.d;
        for (std::size_t j = 0; j < base.d; ++j) dst[j] = src[perm[j]];
      }
    }
    seq.tasks.push_back(split_train_val_test(task, derive_seed(seed, 0x51AB + t)));
  }
  return seq;
}

TaskSequence split_tasks(const LabeledDataset& base, const std::vector<std::pair<int, int>>& pairs,
                         std::uint64_t seed) {
  std::set<int> seen;
  for (const auto& [l0, l1] : pairs) {
    if (l0 == l1 || !seen.insert(l0).second || !seen.insert(l1).second) {
      throw std::invalid_argument("split_tasks: overlapping label pairs (" + std::to_string(l0) +
                                  "/" + std::to_string(l1) + ")");
    }
  }
  std::set<int> present(base.labels.begin(), base.labels.end());
  for (int l : seen) {
    if (!present.count(l)) {
      throw std::invalid_argument("split_tasks: label " + std::to_string(l) +
                                  " absent from the base dataset");
    }
  }

  TaskSequence seq;
  seq.name = "split";
  seq.head_mode_hint = HeadMode::multi;
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    const auto [l0, l1] = pairs[t];
    LabeledDataset task;
    task.d = base.d;
    task.num_classes = 2;
    if (!base.class_names.empty()) {
      task.class_names = {base.class_names[l0], base.class_names[l1]};
    }
    for (std::size_t i = 0; i < base.n; ++i) {
      if (base.labels[i] != l0 && base.labels[i] != l1) continue;
      task.labels.push_back(base.labels[i] == l1 ? 1 : 0);
      task.inputs.insert(task.inputs.end(), base.row(i), base.row(i) + base.d);
    }
    task.n = task.labels.size();
    seq.tasks.push_back(split_train_val_test(task, derive_seed(seed, 0x3D1F + t)));
  }
  return seq;
}

TaskSequence synthetic_tasks(std::size_t T, std::size_t d, std::size_t n, double margin,
                             std::uint64_t seed, double margin_decay) {
  if (T < 1 || d < 1 || n < 1) {
    throw std::invalid_argument("synthetic_tasks: T, d, n must all be >= 1");
  }
  TaskSequence seq;
  seq.name = "synthetic";
  seq.head_mode_hint = HeadMode::multi;

  // Every task direction mixes a component in one shared 2-D subspace with a
  // fresh component of its own. The shared part makes successive tasks
  // interfere (angles step by the golden angle, so a five-task stream ends
  // near a mirror of its start); the fresh part makes each task demand
  // features no earlier task provides.
  constexpr double kGoldenAngle = 2.399963229728653;
  constexpr double kSharedWeight = 0.9;
  std::vector<double> basis1, basis2;
  double base_angle = 0.0;
  if (d >= 2) {
    Rng brng(derive_seed(seed, 0xBA515));
    base_angle = 2.0 * M_PI * brng.uniform();
    basis1 = brng.normal_vector(d);
    basis2 = brng.normal_vector(d);
    double n1 = 0.0;
    for (double v : basis1) n1 += v * v;
    n1 = std::sqrt(std::max(n1, 1e-12));
    for (double& v : basis1) v /= n1;
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += basis2[j] * basis1[j];
    for (std::size_t j = 0; j < d; ++j) basis2[j] -= dot * basis1[j];
    double n2 = 0.0;
    for (double v : basis2) n2 += v * v;
    n2 = std::sqrt(std::max(n2, 1e-12));
    for (double& v : basis2) v /= n2;
  }

  for (std::size_t t = 1; t <= T; ++t) {
    Rng rng(derive_seed(seed, 0xB10B + t));
    std::vector<double> u(d);
    if (d >= 2) {
      const double theta = base_angle + (t - 1) * kGoldenAngle;
      std::vector<double> fresh = rng.normal_vector(d);
      double dot1 = 0.0, dot2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dot1 += fresh[j] * basis1[j];
        dot2 += fresh[j] * basis2[j];
      }
      double nf = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        fresh[j] -= dot1 * basis1[j] + dot2 * basis2[j];
        nf += fresh[j] * fresh[j];
      }
      nf = std::sqrt(std::max(nf, 1e-12));
      const double shared = std::sqrt(kSharedWeight);
      const double unique = std::sqrt(1.0 - kSharedWeight);
      for (std::size_t j = 0; j < d; ++j) {
        u[j] = shared * (std::cos(theta) * basis1[j] + std::sin(theta) * basis2[j]) +
               unique * fresh[j] / nf;
      }
    } else {
      u.assign(d, 1.0);
    }
    const double delta = margin * std::pow(margin_decay, static_cast<double>(t - 1)) *
                         std::sqrt(static_cast<double>(d));
    for (double& v : u) v *= delta / 2.0;

    LabeledDataset task;
    task.d = d;
    task.n = n;
    task.num_classes = 2;
    task.inputs.resize(n * d);
    task.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      task.labels[i] = label;
      const double sign = label == 0 ? 1.0 : -1.0;
      for (std::size_t j = 0; j < d; ++j) {
        task.inputs[i * d + j] = sign * u[j] + rng.normal();
      }
    }
    // Min-max rescale into [0,1]; affine, so separability is unchanged.
    for (std::size_t j = 0; j < d; ++j) {
      double lo = task.inputs[j], hi = task.inputs[j];
      for (std::size_t i = 1; i < n; ++i) {
        lo = std::min(lo, task.inputs[i * d + j]);
        hi = std::max(hi, task.inputs[i * d + j]);
      }
      const double range = std::max(hi - lo, 1e-12);
      for (std::size_t i = 0; i < n; ++i) {
        task.inputs[i * d + j] = (task.inputs[i * d + j] - lo) / range;
      }
    }
    seq.tasks.push_back(split_train_val_test(task, derive_seed(seed, 0x7E57 + t)));
  }
  return seq;
}

}  // namespace claw
