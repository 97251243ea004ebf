#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claw/config.hpp"
#include "claw/csv.hpp"
#include "claw/data.hpp"
#include "claw/metrics.hpp"

namespace claw {

// Builds the task stream for a benchmark, applies the per-task subset and
// trims every test set to the smallest one (seeded subsample) so that grid
// rows average equally sized sets.
TaskSequence build_sequence(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedRunResult {
  std::string method;
  std::uint64_t seed = 0;
  ResultsGrid grid;
  std::vector<long long> task_ms;
  std::vector<double> transfer;  // filled when forward transfer is enabled
};

SeedRunResult run_single(const ExperimentConfig& cfg, const std::string& method,
                         std::uint64_t seed);

// Runs every (method, seed) job over `parallel` worker slots and writes
// results.csv, avg_accuracy.csv, retention.csv, timings.csv, optional
// forward_transfer.csv / significance.csv, and the _DONE marker under
// cfg.out_dir. Returns the process exit status.
int run_experiment(const ExperimentConfig& cfg);

// Derived tables for the `metrics` subcommand.
CsvTable metrics_avg(const CsvTable& results);
CsvTable metrics_retention(const CsvTable& results);
CsvTable metrics_transfer(const CsvTable& transfer);
CsvTable metrics_ttest(const CsvTable& results_a, const CsvTable& results_b, double p_threshold);

}  // namespace claw
