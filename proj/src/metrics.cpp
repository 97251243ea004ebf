#include "claw/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace claw {

void ResultsGrid::push_row(std::vector<double> row) {
  if (row.size() != acc.size() + 1) {
    throw std::invalid_argument("results grid: row " + std::to_string(acc.size() + 1) +
                                " must have " + std::to_string(acc.size() + 1) + " entries, got " +
                                std::to_string(row.size()));
  }
  for (double v : row) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("results grid: accuracy " + std::to_string(v) +
                                  " outside [0,1]");
    }
  }
  acc.push_back(std::move(row));
}

double avg_accuracy(const ResultsGrid& grid, std::size_t t) {
  if (t < 1 || t > grid.acc.size() || grid.acc[t - 1].size() != t) {
    throw std::invalid_argument("avg_accuracy: row " + std::to_string(t) + " is incomplete");
  }
  double s = 0.0;
  for (double v : grid.acc[t - 1]) s += v;
  return s / static_cast<double>(t);
}

std::vector<double> retention_curve(const ResultsGrid& grid) {
  std::vector<double> curve;
  curve.reserve(grid.acc.size());
  for (const auto& row : grid.acc) {
    if (row.empty()) throw std::invalid_argument("retention_curve: empty grid row");
    curve.push_back(row[0]);
  }
  return curve;
}

std::vector<double> forward_transfer_curve(
    const TaskSequence& sequence,
    const std::function<std::unique_ptr<Trainer>(std::uint64_t)>& trainer_factory,
    std::uint64_t seed) {
  const std::size_t T = sequence.tasks.size();
  std::vector<double> curve(T, 0.0);
  for (std::size_t k = 1; k <= T; ++k) {
    auto trainer = trainer_factory(derive_seed(seed, 0xF7 + k));
    for (std::size_t t = T - k; t < T; ++t) {
      trainer->observe_task(sequence.tasks[t].train);
    }
    // The last task in the stream is the k-th one the trainer saw.
    curve[k - 1] = trainer->evaluate(sequence.tasks[T - 1].test, static_cast<int>(k));
  }
  return curve;
}

namespace {

// Regularized incomplete beta I_x(a,b) via the Lentz continued fraction.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double incbeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_cdf(double t, std::size_t df) {
  if (df == 0) throw std::invalid_argument("student_t_cdf: zero degrees of freedom");
  const double v = static_cast<double>(df);
  const double x = v / (v + t * t);
  const double tail = 0.5 * incbeta(v / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b,
                         double p_threshold) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_ttest: samples of unequal length");
  }
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult res;
  if (sd == 0.0) {
    if (mean == 0.0) {
      res.t_stat = 0.0;
      res.p_value = 1.0;
      res.significant = false;
    } else {
      res.t_stat = mean > 0.0 ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
      res.p_value = 0.0;
      res.significant = true;
    }
    return res;
  }

  res.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double cdf = student_t_cdf(std::abs(res.t_stat), n - 1);
  res.p_value = 2.0 * (1.0 - cdf);
  res.significant = res.p_value < p_threshold;
  return res;
}

}  // namespace claw
