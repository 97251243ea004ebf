#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "claw/data.hpp"
#include "claw/trainers.hpp"

namespace claw {

// acc[t-1][k-1]: accuracy on task k's test set right after training task t,
// defined for k <= t (lower-triangular occupancy).
struct ResultsGrid {
  std::vector<std::vector<double>> acc;

  std::size_t tasks_done() const { return acc.size(); }
  void push_row(std::vector<double> row);  // row t must have t entries in [0,1]
};

// Arithmetic mean of acc[t][1..t]. Requires a complete row t (1-based).
double avg_accuracy(const ResultsGrid& grid, std::size_t t);

// (acc[1][1], acc[2][1], ..., acc[T][1]): accuracy on the first task as the
// remaining tasks are learned.
std::vector<double> retention_curve(const ResultsGrid& grid);

// For k = 1..T, trains a fresh model on the final k tasks (in stream order)
// and records the accuracy on the last task. trainer_factory receives the
// per-run seed.
std::vector<double> forward_transfer_curve(
    const TaskSequence& sequence,
    const std::function<std::unique_ptr<Trainer>(std::uint64_t)>& trainer_factory,
    std::uint64_t seed);

struct TTestResult {
  double t_stat = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

// Two-tailed paired t-test. Degenerate zero-variance differences: nonzero
// mean reports an infinite statistic and significance; zero mean reports not
// significant.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b,
                         double p_threshold);

// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, std::size_t df);

}  // namespace claw
