#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claw/trainers.hpp"
#include "claw/types.hpp"

namespace claw {

// Full experiment description. Parsing fills benchmark-specific defaults for
// any field left unset, so a parsed config is always concrete.
struct ExperimentConfig {
  std::string method = "claw";
  std::vector<std::string> compare_methods;  // extra methods run for significance tests
  std::string benchmark = "split-synthetic";
  std::vector<std::size_t> architecture;  // hidden layer widths
  std::string head_mode = "auto";         // auto | single | multi
  int epochs = 0;  // 0 -> benchmark default
  int minibatch = 0;  // 0 -> benchmark default
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double lambda = 100.0;  // EWC anchor strength
  std::size_t coreset_size = 200;
  double omega1 = 0.05;
  double omega2 = 0.02;
  std::size_t subset_per_task = 0;  // 0 = full data; else train rows per task
  std::string ablation = "none";
  std::string data_dir;  // empty -> $CLAW_DATA_DIR, else "data"
  std::string out_dir = "out";
  int mc_samples = 1;
  int predict_samples = 10;
  std::string predict_mode = "mean";
  double learning_rate = 0.0;  // 0 -> benchmark default
  int parallel = 1;
  bool forward_transfer = false;
  std::size_t tasks = 0;  // 0 -> benchmark default
  std::size_t synthetic_dim = 32;
  std::size_t synthetic_n = 1000;
  double synthetic_margin = 1.0;
  double synthetic_margin_decay = 0.9;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);

// Enum/positivity validation plus benchmark default fill; throws ConfigError
// naming the offending key.
void validate_config(ExperimentConfig& cfg);

HeadMode resolved_head_mode(const ExperimentConfig& cfg, HeadMode benchmark_hint);
Ablation parse_ablation(const std::string& name);
TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed);
std::string resolved_data_dir(const ExperimentConfig& cfg);

}  // namespace claw
