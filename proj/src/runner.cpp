#include "claw/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>
#include <tuple>

#include "claw/errors.hpp"

namespace claw {

namespace {

namespace fs = std::filesystem;

std::vector<std::pair<int, int>> five_binary_pairs() {
  return {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
}

LabeledDataset load_benchmark_base(const ExperimentConfig& cfg) {
  const std::string dir = resolved_data_dir(cfg);
  const std::string sub = (cfg.benchmark == "split-fashion") ? "fashion-mnist" : "mnist";
  const std::string images = dir + "/" + sub + "/train-images-idx3-ubyte";
  const std::string labels = dir + "/" + sub + "/train-labels-idx1-ubyte";
  return load_idx(images, labels);
}

}  // namespace

TaskSequence build_sequence(const ExperimentConfig& cfg, std::uint64_t seed) {
  TaskSequence seq;
  if (cfg.benchmark == "split-synthetic") {
    seq = synthetic_tasks(cfg.tasks, cfg.synthetic_dim, cfg.synthetic_n, cfg.synthetic_margin,
                          seed, cfg.synthetic_margin_decay);
  } else {
    LabeledDataset base = load_benchmark_base(cfg);
    if (cfg.benchmark == "permuted-mnist") {
      seq = permuted_tasks(base, cfg.tasks, seed);
    } else {
      seq = split_tasks(base, five_binary_pairs(), seed);
    }
  }

  if (cfg.subset_per_task > 0) {
    const std::size_t eval_n = std::max<std::size_t>(1, cfg.subset_per_task / 4);
    for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
      auto& triple = seq.tasks[t];
      triple.train = subsample(triple.train, cfg.subset_per_task, derive_seed(seed, 0x5c1 + t));
      triple.val = subsample(triple.val, eval_n, derive_seed(seed, 0x5c2 + t));
      triple.test = subsample(triple.test, eval_n, derive_seed(seed, 0x5c3 + t));
    }
  }

  // Equal-size evaluation sets: trim every test split to the smallest one.
  std::size_t min_test = seq.tasks.front().test.n;
  for (const auto& triple : seq.tasks) min_test = std::min(min_test, triple.test.n);
  for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
    seq.tasks[t].test = subsample(seq.tasks[t].test, min_test, derive_seed(seed, 0x731 + t));
  }
  return seq;
}

SeedRunResult run_single(const ExperimentConfig& cfg, const std::string& method,
                         std::uint64_t seed) {
  TaskSequence seq = build_sequence(cfg, seed);
  const HeadMode head_mode = resolved_head_mode(cfg, seq.head_mode_hint);
  const std::size_t input_dim = seq.tasks.front().train.d;

  TrainConfig tc = train_config(cfg, seed);
  if (method != "claw") tc.ablation = Ablation::none;
  auto trainer = make_trainer(method, tc, head_mode, input_dim, cfg.architecture);

  SeedRunResult result;
  result.method = method;
  result.seed = seed;
  for (std::size_t t = 1; t <= seq.tasks.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    trainer->observe_task(seq.tasks[t - 1].train);
    const auto stop = std::chrono::steady_clock::now();
    result.task_ms.push_back(
        std::chrono::duration_cast<std::chrono::milliseconds>(stop - start).count());

    std::vector<double> row;
    for (std::size_t k = 1; k <= t; ++k) {
      row.push_back(trainer->evaluate(seq.tasks[k - 1].test, static_cast<int>(k)));
    }
    result.grid.push_row(std::move(row));
  }

  if (cfg.forward_transfer) {
    auto factory = [&](std::uint64_t run_seed) {
      TrainConfig ftc = train_config(cfg, run_seed);
      if (method != "claw") ftc.ablation = Ablation::none;
      return make_trainer(method, ftc, head_mode, input_dim, cfg.architecture);
    };
    result.transfer = forward_transfer_curve(seq, factory, seed);
  }
  return result;
}

namespace {

std::string run_id(const std::string& method, std::uint64_t seed) {
  return method + "-s" + std::to_string(seed);
}

void write_outputs(const ExperimentConfig& cfg, const std::vector<SeedRunResult>& runs) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  CsvTable results{{"run_id", "method", "seed", "task", "eval_task", "accuracy"}, {}};
  CsvTable timings{{"run_id", "method", "seed", "task", "wall_ms"}, {}};
  CsvTable avg{{"method", "seed", "task", "avg_accuracy"}, {}};
  CsvTable retention{{"method", "seed", "task", "first_task_accuracy"}, {}};
  CsvTable transfer{{"method", "seed", "k", "last_task_accuracy"}, {}};

  for (const auto& run : runs) {
    const std::string id = run_id(run.method, run.seed);
    const std::string seed_str = std::to_string(run.seed);
    for (std::size_t t = 1; t <= run.grid.tasks_done(); ++t) {
      for (std::size_t k = 1; k <= t; ++k) {
        results.rows.push_back({id, run.method, seed_str, std::to_string(t), std::to_string(k),
                                format_real(run.grid.acc[t - 1][k - 1])});
      }
      timings.rows.push_back({id, run.method, seed_str, std::to_string(t),
                              std::to_string(run.task_ms[t - 1])});
      avg.rows.push_back({run.method, seed_str, std::to_string(t),
                          format_real(avg_accuracy(run.grid, t))});
    }
    const auto curve = retention_curve(run.grid);
    for (std::size_t t = 1; t <= curve.size(); ++t) {
      retention.rows.push_back(
          {run.method, seed_str, std::to_string(t), format_real(curve[t - 1])});
    }
    for (std::size_t k = 1; k <= run.transfer.size(); ++k) {
      transfer.rows.push_back(
          {run.method, seed_str, std::to_string(k), format_real(run.transfer[k - 1])});
    }
  }

  emit_csv(results, (out / "results.csv").string());
  emit_csv(timings, (out / "timings.csv").string());
  emit_csv(avg, (out / "avg_accuracy.csv").string());
  emit_csv(retention, (out / "retention.csv").string());
  if (cfg.forward_transfer) emit_csv(transfer, (out / "forward_transfer.csv").string());

  if (!cfg.compare_methods.empty()) {
    CsvTable sig{{"method_a", "method_b", "metric", "t_stat", "p_value", "significant"}, {}};
    // Final average accuracy per seed, paired across seeds.
    auto final_avgs = [&](const std::string& method) {
      std::vector<double> vals;
      for (const auto& run : runs) {
        if (run.method == method) vals.push_back(avg_accuracy(run.grid, run.grid.tasks_done()));
      }
      return vals;
    };
    std::vector<std::string> methods{cfg.method};
    methods.insert(methods.end(), cfg.compare_methods.begin(), cfg.compare_methods.end());
    for (std::size_t i = 0; i < methods.size(); ++i) {
      for (std::size_t j = i + 1; j < methods.size(); ++j) {
        const auto a = final_avgs(methods[i]);
        const auto b = final_avgs(methods[j]);
        const TTestResult res = paired_ttest(a, b, 0.05);
        sig.rows.push_back({methods[i], methods[j], "final_avg_accuracy",
                            format_real(res.t_stat), format_real(res.p_value),
                            res.significant ? "true" : "false"});
      }
    }
    emit_csv(sig, (out / "significance.csv").string());
  }

  std::ofstream done((out / "_DONE").string());
  if (!done) throw IoError("cannot write _DONE marker in " + cfg.out_dir);
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg) {
  std::vector<std::string> methods{cfg.method};
  for (const auto& m : cfg.compare_methods) {
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }

  struct Job {
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& method : methods) {
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({method, seed});
  }

  std::vector<SeedRunResult> runs(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min<std::size_t>(std::max(cfg.parallel, 1), jobs.size());

  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        runs[i] = run_single(cfg, jobs[i].method, jobs[i].seed);
      } catch (const std::exception& e) {
        failures[i] = std::string(e.what());
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  bool failed = false;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!failures[i].empty()) {
      std::cerr << "run " << run_id(jobs[i].method, jobs[i].seed) << " failed: " << failures[i]
                << "\n";
      failed = true;
    }
  }
  if (failed) return 1;

  write_outputs(cfg, runs);
  return 0;
}

namespace {

std::size_t column(const CsvTable& table, const std::string& name) {
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (table.header[i] == name) return i;
  }
  throw FormatError("csv: missing column \"" + name + "\"");
}

}  // namespace

CsvTable metrics_avg(const CsvTable& results) {
  const std::size_t c_method = column(results, "method");
  const std::size_t c_seed = column(results, "seed");
  const std::size_t c_task = column(results, "task");
  const std::size_t c_acc = column(results, "accuracy");

  // (method, seed, t) -> accumulated accuracy over eval tasks
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> cells;
  for (const auto& row : results.rows) {
    auto key = std::make_tuple(row[c_method], row[c_seed], std::stoi(row[c_task]));
    auto& cell = cells[key];
    cell.first += std::stod(row[c_acc]);
    cell.second += 1;
  }
  CsvTable out{{"method", "seed", "task", "avg_accuracy"}, {}};
  for (const auto& [key, cell] : cells) {
    out.rows.push_back({std::get<0>(key), std::get<1>(key), std::to_string(std::get<2>(key)),
                        format_real(cell.first / cell.second)});
  }
  return out;
}

CsvTable metrics_retention(const CsvTable& results) {
  const std::size_t c_method = column(results, "method");
  const std::size_t c_seed = column(results, "seed");
  const std::size_t c_task = column(results, "task");
  const std::size_t c_eval = column(results, "eval_task");
  const std::size_t c_acc = column(results, "accuracy");

  CsvTable out{{"method", "seed", "task", "first_task_accuracy"}, {}};
  for (const auto& row : results.rows) {
    if (std::stoi(row[c_eval]) != 1) continue;
    out.rows.push_back({row[c_method], row[c_seed], row[c_task], row[c_acc]});
  }
  return out;
}

CsvTable metrics_transfer(const CsvTable& transfer) {
  const std::size_t c_method = column(transfer, "method");
  const std::size_t c_k = column(transfer, "k");
  const std::size_t c_acc = column(transfer, "last_task_accuracy");

  std::map<std::pair<std::string, int>, std::pair<double, int>> cells;
  for (const auto& row : transfer.rows) {
    auto& cell = cells[{row[c_method], std::stoi(row[c_k])}];
    cell.first += std::stod(row[c_acc]);
    cell.second += 1;
  }
  CsvTable out{{"method", "k", "mean_last_task_accuracy"}, {}};
  for (const auto& [key, cell] : cells) {
    out.rows.push_back(
        {key.first, std::to_string(key.second), format_real(cell.first / cell.second)});
  }
  return out;
}

CsvTable metrics_ttest(const CsvTable& results_a, const CsvTable& results_b, double p_threshold) {
  auto final_by_seed = [](const CsvTable& results) {
    CsvTable avg = metrics_avg(results);
    const std::size_t c_seed = column(avg, "seed");
    const std::size_t c_task = column(avg, "task");
    const std::size_t c_val = column(avg, "avg_accuracy");
    std::map<std::string, std::pair<int, double>> best;  // seed -> (t, value)
    std::string method;
    const std::size_t c_method = column(avg, "method");
    for (const auto& row : avg.rows) {
      method = row[c_method];
      const int t = std::stoi(row[c_task]);
      auto it = best.find(row[c_seed]);
      if (it == best.end() || t > it->second.first) {
        best[row[c_seed]] = {t, std::stod(row[c_val])};
      }
    }
    return std::make_pair(method, best);
  };

  auto [method_a, by_seed_a] = final_by_seed(results_a);
  auto [method_b, by_seed_b] = final_by_seed(results_b);

  std::vector<double> a, b;
  for (const auto& [seed, cell] : by_seed_a) {
    auto it = by_seed_b.find(seed);
    if (it == by_seed_b.end()) {
      throw std::invalid_argument("ttest: seed " + seed + " missing from the baseline results");
    }
    a.push_back(cell.second);
    b.push_back(it->second.second);
  }
  const TTestResult res = paired_ttest(a, b, p_threshold);
  CsvTable out{{"method_a", "method_b", "metric", "t_stat", "p_value", "significant"}, {}};
  out.rows.push_back({method_a, method_b, "final_avg_accuracy", format_real(res.t_stat),
                      format_real(res.p_value), res.significant ? "true" : "false"});
  return out;
}

}  // namespace claw
