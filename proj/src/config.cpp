#include "claw/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "claw/errors.hpp"
#include "json.hpp"

namespace claw {

namespace {

using nlohmann::json;

const std::set<std::string> kMethods = {"claw", "vcl", "vcl-coreset", "ewc", "finetune"};
const std::set<std::string> kBenchmarks = {"permuted-mnist", "split-mnist", "split-fashion",
                                           "split-synthetic"};
const std::set<std::string> kAblations = {"none", "fixed_s", "always_adapt", "never_adapt"};

void apply_benchmark_defaults(ExperimentConfig& cfg) {
  if (cfg.benchmark == "permuted-mnist") {
    if (cfg.architecture.empty()) cfg.architecture = {100, 100};
    if (cfg.minibatch == 0) cfg.minibatch = 256;
    if (cfg.tasks == 0) cfg.tasks = 10;
  } else if (cfg.benchmark == "split-mnist") {
    if (cfg.architecture.empty()) cfg.architecture = {256, 256};
    if (cfg.minibatch == 0) cfg.minibatch = 128;
    if (cfg.tasks == 0) cfg.tasks = 5;
  } else if (cfg.benchmark == "split-fashion") {
    if (cfg.architecture.empty()) cfg.architecture = {150, 150, 150, 150};
    if (cfg.minibatch == 0) cfg.minibatch = 256;
    if (cfg.tasks == 0) cfg.tasks = 5;
  } else if (cfg.benchmark == "split-synthetic") {
    if (cfg.architecture.empty()) cfg.architecture = {8, 8};
    if (cfg.minibatch == 0) cfg.minibatch = 64;
    if (cfg.tasks == 0) cfg.tasks = 5;
    if (cfg.learning_rate == 0.0) cfg.learning_rate = 0.01;
    if (cfg.epochs == 0) cfg.epochs = 30;
  }
  if (cfg.learning_rate == 0.0) cfg.learning_rate = 1e-3;
  if (cfg.epochs == 0) cfg.epochs = 10;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for key \"" + key + "\"");
  }
}

}  // namespace

void validate_config(ExperimentConfig& cfg) {
  auto check_method = [](const std::string& m, const std::string& key) {
    if (!kMethods.count(m)) {
      throw ConfigError("config: unknown method \"" + m + "\" for key \"" + key + "\"");
    }
  };
  check_method(cfg.method, "method");
  for (const auto& m : cfg.compare_methods) check_method(m, "compare_methods");
  if (!kBenchmarks.count(cfg.benchmark)) {
    throw ConfigError("config: unknown benchmark \"" + cfg.benchmark + "\" for key \"benchmark\"");
  }
  if (!kAblations.count(cfg.ablation)) {
    throw ConfigError("config: unknown ablation \"" + cfg.ablation + "\" for key \"ablation\"");
  }
  if (cfg.head_mode != "auto" && cfg.head_mode != "single" && cfg.head_mode != "multi") {
    throw ConfigError("config: head_mode must be auto, single or multi");
  }
  if (cfg.predict_mode != "mean" && cfg.predict_mode != "sample") {
    throw ConfigError("config: predict_mode must be mean or sample");
  }
  apply_benchmark_defaults(cfg);
  for (std::size_t w : cfg.architecture) {
    if (w == 0) throw ConfigError("config: architecture widths must be positive");
  }
  if (cfg.epochs <= 0) throw ConfigError("config: epochs must be positive");
  if (cfg.minibatch <= 0) throw ConfigError("config: minibatch must be positive");
  if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (cfg.parallel <= 0) throw ConfigError("config: parallel must be positive");
  if (cfg.mc_samples <= 0) throw ConfigError("config: mc_samples must be positive");
  if (cfg.predict_samples <= 0) throw ConfigError("config: predict_samples must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("config: learning_rate must be positive");
  if (cfg.lambda < 0.0) throw ConfigError("config: lambda must be non-negative");
  if (cfg.tasks == 0) throw ConfigError("config: tasks must be positive");
  if (cfg.benchmark == "split-synthetic") {
    if (cfg.synthetic_dim == 0 || cfg.synthetic_n == 0) {
      throw ConfigError("config: synthetic_dim and synthetic_n must be positive");
    }
  }
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "method") cfg.method = get_as<std::string>(value, key);
    else if (key == "compare_methods") cfg.compare_methods = get_as<std::vector<std::string>>(value, key);
    else if (key == "benchmark") cfg.benchmark = get_as<std::string>(value, key);
    else if (key == "architecture") cfg.architecture = get_as<std::vector<std::size_t>>(value, key);
    else if (key == "head_mode") cfg.head_mode = get_as<std::string>(value, key);
    else if (key == "epochs") cfg.epochs = get_as<int>(value, key);
    else if (key == "minibatch") cfg.minibatch = get_as<int>(value, key);
    else if (key == "seeds") cfg.seeds = get_as<std::vector<std::uint64_t>>(value, key);
    else if (key == "lambda") cfg.lambda = get_as<double>(value, key);
    else if (key == "coreset_size") cfg.coreset_size = get_as<std::size_t>(value, key);
    else if (key == "omega1") cfg.omega1 = get_as<double>(value, key);
    else if (key == "omega2") cfg.omega2 = get_as<double>(value, key);
    else if (key == "subset_per_task") cfg.subset_per_task = get_as<std::size_t>(value, key);
    else if (key == "ablation") cfg.ablation = get_as<std::string>(value, key);
    else if (key == "data_dir") cfg.data_dir = get_as<std::string>(value, key);
    else if (key == "out_dir") cfg.out_dir = get_as<std::string>(value, key);
    else if (key == "mc_samples") cfg.mc_samples = get_as<int>(value, key);
    else if (key == "predict_samples") cfg.predict_samples = get_as<int>(value, key);
    else if (key == "predict_mode") cfg.predict_mode = get_as<std::string>(value, key);
    else if (key == "learning_rate") cfg.learning_rate = get_as<double>(value, key);
    else if (key == "parallel") cfg.parallel = get_as<int>(value, key);
    else if (key == "forward_transfer") cfg.forward_transfer = get_as<bool>(value, key);
    else if (key == "tasks") cfg.tasks = get_as<std::size_t>(value, key);
    else if (key == "synthetic_dim") cfg.synthetic_dim = get_as<std::size_t>(value, key);
    else if (key == "synthetic_n") cfg.synthetic_n = get_as<std::size_t>(value, key);
    else if (key == "synthetic_margin") cfg.synthetic_margin = get_as<double>(value, key);
    else if (key == "synthetic_margin_decay") cfg.synthetic_margin_decay = get_as<double>(value, key);
    else throw ConfigError("config: unknown key \"" + key + "\"");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["method"] = cfg.method;
  j["compare_methods"] = cfg.compare_methods;
  j["benchmark"] = cfg.benchmark;
  j["architecture"] = cfg.architecture;
  j["head_mode"] = cfg.head_mode;
  j["epochs"] = cfg.epochs;
  j["minibatch"] = cfg.minibatch;
  j["seeds"] = cfg.seeds;
  j["lambda"] = cfg.lambda;
  j["coreset_size"] = cfg.coreset_size;
  j["omega1"] = cfg.omega1;
  j["omega2"] = cfg.omega2;
  j["subset_per_task"] = cfg.subset_per_task;
  j["ablation"] = cfg.ablation;
  j["data_dir"] = cfg.data_dir;
  j["out_dir"] = cfg.out_dir;
  j["mc_samples"] = cfg.mc_samples;
  j["predict_samples"] = cfg.predict_samples;
  j["predict_mode"] = cfg.predict_mode;
  j["learning_rate"] = cfg.learning_rate;
  j["parallel"] = cfg.parallel;
  j["forward_transfer"] = cfg.forward_transfer;
  j["tasks"] = cfg.tasks;
  j["synthetic_dim"] = cfg.synthetic_dim;
  j["synthetic_n"] = cfg.synthetic_n;
  j["synthetic_margin"] = cfg.synthetic_margin;
  j["synthetic_margin_decay"] = cfg.synthetic_margin_decay;
  return j.dump(2) + "\n";
}

HeadMode resolved_head_mode(const ExperimentConfig& cfg, HeadMode benchmark_hint) {
  if (cfg.head_mode == "single") return HeadMode::single;
  if (cfg.head_mode == "multi") return HeadMode::multi;
  return benchmark_hint;
}

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::none;
  if (name == "fixed_s") return Ablation::fixed_s;
  if (name == "always_adapt") return Ablation::always_adapt;
  if (name == "never_adapt") return Ablation::never_adapt;
  throw ConfigError("config: unknown ablation \"" + name + "\"");
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.minibatch = cfg.minibatch;
  tc.mc_samples = cfg.mc_samples;
  tc.lr = cfg.learning_rate;
  tc.omega1 = cfg.omega1;
  tc.omega2 = cfg.omega2;
  tc.seed = seed;
  tc.ablation = parse_ablation(cfg.ablation);
  tc.predict_samples = cfg.predict_samples;
  tc.predict_mode = cfg.predict_mode == "sample" ? PredictMode::sample : PredictMode::mean;
  tc.ewc_lambda = cfg.lambda;
  tc.coreset_size = cfg.coreset_size;
  return tc;
}

std::string resolved_data_dir(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("CLAW_DATA_DIR")) return env;
  return "data";
}

}  // namespace claw
