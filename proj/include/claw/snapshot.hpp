#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "claw/types.hpp"

namespace claw {

// Frozen copy of one layer's variational parameters plus the per-weight
// Gaussian they induce. Immutable once taken; safe to share across threads.
struct LayerSnapshot {
  std::size_t in = 0, out = 0;
  Activation act = Activation::relu;
  AdaptMode mode = AdaptMode::stochastic;
  std::vector<double> gamma, bias_gamma;  // [in*out], [out]
  std::vector<double> p, a, s;            // [out] each
  std::vector<double> w_mean, w_var;      // induced, [in*out]
  std::vector<double> b_mean, b_var;      // induced, [out]
};

// End-of-task state of a whole model; the anchor distribution for the next
// task and the parameter source for evaluation snapshots.
struct PosteriorSnapshot {
  HeadMode head_mode = HeadMode::single;
  std::vector<LayerSnapshot> hidden;
  std::map<int, LayerSnapshot> heads;  // single-head models use key 0
};

// Fills w_mean/w_var/b_mean/b_var from (gamma, bias_gamma, p, a, s, mode).
void compute_induced(LayerSnapshot& ls);

// Binary snapshot file, versioned by the leading magic string "CLAW1".
// Stores the shape header and (gamma, bias_gamma, p, a, s) per layer; the
// induced Gaussians are recomputed on load.
void save_snapshot(const PosteriorSnapshot& snap, const std::string& path);
PosteriorSnapshot load_snapshot(const std::string& path);

}  // namespace claw
