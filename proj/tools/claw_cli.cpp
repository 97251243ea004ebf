#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "claw/config.hpp"
#include "claw/csv.hpp"
#include "claw/runner.hpp"

namespace {

void print_csv(const claw::CsvTable& table, const std::string& out_path) {
  if (!out_path.empty()) {
    claw::emit_csv(table, out_path);
    return;
  }
  auto join = [](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += ',';
      line += row[i];
    }
    return line;
  };
  std::cout << join(table.header) << "\n";
  for (const auto& row : table.rows) std::cout << join(row) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, mode, in_path, baseline_path, kind, metrics_out;
  std::int64_t seed_override = -1;
  std::int64_t subset_override = -1;
  int parallel_override = 0;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("--config", config_path, "JSON experiment config")->required();
  run->add_option("--seed", seed_override, "Run only this seed");
  run->add_option("--out-dir", out_dir, "Output directory override");
  run->add_option("--subset", subset_override, "Training rows per task (desk-scale runs)");
  run->add_option("--parallel", parallel_override, "Worker slots for seeds");

  auto* ablate = app.add_subcommand("ablate", "Run a CLAW ablation");
  ablate->add_option("--config", config_path, "JSON experiment config")->required();
  ablate->add_option("--mode", mode, "fixed_s | always_adapt | never_adapt")->required();
  ablate->add_option("--seed", seed_override, "Run only this seed");
  ablate->add_option("--out-dir", out_dir, "Output directory override");
  ablate->add_option("--subset", subset_override, "Training rows per task");
  ablate->add_option("--parallel", parallel_override, "Worker slots for seeds");

  auto* metrics = app.add_subcommand("metrics", "Derive metric tables from result files");
  metrics->add_option("--in", in_path, "results.csv (avg/retention/ttest) or forward_transfer.csv (transfer)")
      ->required();
  metrics->add_option("--kind", kind, "avg | retention | transfer | ttest")->required();
  metrics->add_option("--baseline", baseline_path, "Second results.csv for ttest");
  metrics->add_option("--out", metrics_out, "Write the table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(run) || app.got_subcommand(ablate)) {
      claw::ExperimentConfig cfg = claw::parse_config(config_path);
      if (app.got_subcommand(ablate)) {
        cfg.method = "claw";
        cfg.compare_methods.clear();
        cfg.ablation = mode;
        if (out_dir.empty()) cfg.out_dir += "-" + mode;
        claw::validate_config(cfg);
      }
      if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (subset_override >= 0) cfg.subset_per_task = static_cast<std::size_t>(subset_override);
      if (parallel_override > 0) cfg.parallel = parallel_override;
      return claw::run_experiment(cfg);
    }

    const claw::CsvTable input = claw::parse_csv(in_path);
    claw::CsvTable table;
    if (kind == "avg") {
      table = claw::metrics_avg(input);
    } else if (kind == "retention") {
      table = claw::metrics_retention(input);
    } else if (kind == "transfer") {
      table = claw::metrics_transfer(input);
    } else if (kind == "ttest") {
      if (baseline_path.empty()) {
        std::cerr << "metrics --kind ttest needs --baseline\n";
        return 2;
      }
      table = claw::metrics_ttest(input, claw::parse_csv(baseline_path), 0.05);
    } else {
      std::cerr << "unknown metrics kind \"" << kind << "\"\n";
      return 2;
    }
    print_csv(table, metrics_out);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
