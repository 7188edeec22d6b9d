// Command line front end: dataset generation, training, sweeps, coefficient grids,
// evaluation of saved models and run summaries.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dephn/config.hpp"
#include "dephn/dataset.hpp"
#include "dephn/experiment.hpp"
#include "dephn/reports.hpp"
#include "dephn/virtual_gradient.hpp"

namespace fs = std::filesystem;
using namespace dephn;

namespace {

harness::TrainConfig load_with_overrides(const std::string& config_path, const std::optional<std::uint64_t>& seed) {
  harness::TrainConfig config = config_path.empty() ? harness::TrainConfig{} : harness::load_config(config_path);
  if (seed) config.seed = *seed;
  return config;
}

void print_metrics(const std::vector<harness::TaskMetrics>& metrics) {
  for (const auto& m : metrics) {
    std::printf("task %zu  logloss %.6f  auc %s\n", m.task, m.logloss,
                m.auc ? harness::format_double(*m.auc).c_str() : ("omitted (" + m.auc_error + ")").c_str());
  }
}

int generate_data(const std::string& variant, std::uint64_t seed, std::size_t samples, const std::string& threshold,
                  double noise_std, double teacher_scale, const fs::path& out_dir) {
  data::DatasetSpec spec;
  spec.variant = data::parse_variant(variant);
  spec.seed = seed;
  spec.sample_count = samples;
  spec.threshold = data::parse_threshold(threshold);
  spec.noise_std = noise_std;
  spec.teacher.output_scale = teacher_scale;
  const data::LabeledDataset ds = data::generate_dataset(spec);
  fs::create_directories(out_dir);
  data::write_dataset_csv(out_dir / "dataset.csv", ds);
  data::write_confidence_csv(out_dir / "confidences.csv", ds);
  std::ofstream(out_dir / "manifest.json", std::ios::binary) << data::dataset_manifest_json(spec, ds);
  std::printf("wrote %zu rows to %s (correlation %.4f)\n", ds.rows, (out_dir / "dataset.csv").string().c_str(),
              data::measure_task_correlation(ds.confidences[0], ds.confidences[1]));
  return 0;
}

int coeff_grid(const std::string& function, std::size_t resolution, const std::string& out_dir) {
  std::vector<vg::CoefficientFunction> functions;
  if (function == "all") {
    functions.assign(vg::kAllFunctions.begin(), vg::kAllFunctions.end());
  } else {
    functions.push_back(vg::parse_function(function));
  }
  if (out_dir.empty()) {
    if (functions.size() != 1) throw std::invalid_argument("--function all needs --out-dir");
    vg::write_coefficient_grid_csv(std::cout, functions.front(), resolution);
    return 0;
  }
  fs::create_directories(out_dir);
  for (auto f : functions) {
    const fs::path path = fs::path(out_dir) / ("coeff_grid_" + std::string(vg::function_name(f)) + ".csv");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    vg::write_coefficient_grid_csv(os, f, resolution);
  }
  return 0;
}

int evaluate(const fs::path& model_path, const fs::path& data_path, const std::string& confidences,
             const std::string& out_dir) {
  if (!fs::exists(model_path)) throw std::runtime_error("model file not found: " + model_path.string());
  if (!fs::exists(data_path)) throw std::runtime_error("dataset file not found: " + data_path.string());
  auto trainer = harness::load_model(model_path);
  data::LabeledDataset ds = data::load_csv_dataset(data_path, trainer->schema(), confidences);
  const auto predictions = trainer->predict(ds);
  const auto metrics = harness::evaluate_predictions(predictions, ds);
  print_metrics(metrics);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const harness::ArtifactTag tag{harness::config_hash(trainer->config()), trainer->config().seed};
    harness::write_metrics_csv(fs::path(out_dir) / "metrics.csv", tag, harness::model_kind_name(trainer->config().model),
                               metrics);
  }
  return 0;
}

int report(std::vector<std::string> runs, const std::string& out_dir) {
  std::vector<fs::path> dirs;
  if (runs.empty()) {
    if (out_dir.empty()) throw std::invalid_argument("report needs run directories or --out-dir");
    if (!fs::is_directory(out_dir)) throw std::runtime_error("directory not found: " + out_dir);
    if (fs::exists(fs::path(out_dir) / "metrics.csv")) dirs.emplace_back(out_dir);
    std::vector<fs::path> children;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.csv")) children.push_back(entry.path());
    }
    std::sort(children.begin(), children.end());
    dirs.insert(dirs.end(), children.begin(), children.end());
    if (dirs.empty()) throw std::runtime_error("no metrics.csv found under " + out_dir);
  } else {
    for (const auto& r : runs) dirs.emplace_back(r);
  }
  const std::string table = harness::summarize_runs(dirs);
  std::cout << table;
  if (!out_dir.empty() && fs::is_directory(out_dir)) {
    std::ofstream(fs::path(out_dir) / "summary.txt", std::ios::binary) << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task CTR experiments with heterogeneous experts and virtual gradient gating"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic dataset, its confidences and a manifest");
  std::string variant = "unrelated", threshold = "zero";
  std::size_t samples = 50000;
  double noise_std = 0.1, teacher_scale = 3.5;
  std::uint64_t data_seed = 7;
  gen->add_option("--variant", variant, "related | unrelated")->capture_default_str();
  gen->add_option("--seed", data_seed, "Generation seed")->capture_default_str();
  gen->add_option("--samples", samples, "Number of rows")->capture_default_str();
  gen->add_option("--threshold", threshold, "zero | median")->capture_default_str();
  gen->add_option("--noise-std", noise_std, "Noise of the related transform")->capture_default_str();
  gen->add_option("--teacher-scale", teacher_scale, "Range of the teacher confidence")->capture_default_str();
  gen->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one model and write its artifacts");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out-dir", out_dir, "Artifact directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Train every coefficient function under both similarity measures");
  sweep->add_option("--config", config_path, "JSON config file");
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--out-dir", out_dir, "Sweep directory")->required();

  auto* grid = app.add_subcommand("coeff-grid", "Tabulate a coefficient function on a regular grid");
  std::string function = "add-sqrt";
  std::size_t resolution = 101;
  grid->add_option("--function", function, "Coefficient function name or 'all'")->capture_default_str();
  grid->add_option("--resolution", resolution, "Grid points per axis")->capture_default_str();
  grid->add_option("--out-dir", out_dir, "Write files here instead of standard output");

  auto* eval = app.add_subcommand("eval", "Score a saved model on a dataset CSV");
  std::string model_path, data_path, confidences;
  eval->add_option("--model", model_path, "model.json written by train")->required();
  eval->add_option("--data", data_path, "Dataset CSV")->required();
  eval->add_option("--confidences", confidences, "Optional confidences CSV");
  eval->add_option("--out-dir", out_dir, "Write metrics.csv here");

  auto* rep = app.add_subcommand("report", "Summarize the metrics of finished runs");
  std::vector<std::string> runs;
  rep->add_option("runs", runs, "Run directories");
  rep->add_option("--out-dir", out_dir, "Scan this directory for runs and write summary.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return generate_data(variant, data_seed, samples, threshold, noise_std, teacher_scale, out_dir);
    if (*train) {
      const auto config = load_with_overrides(config_path, seed);
      const auto result = harness::run_experiment(config, out_dir);
      print_metrics(result.metrics);
      std::printf("artifacts in %s (config %s, %.1fs)\n", out_dir.c_str(), result.tag.config_hash.c_str(),
                  result.train_seconds);
      return 0;
    }
    if (*sweep) {
      const auto config = load_with_overrides(config_path, seed);
      const auto rows = harness::run_sweep(config, out_dir);
      std::printf("%zu sweep rows written to %s\n", rows.size(), (fs::path(out_dir) / "sweep.csv").string().c_str());
      return 0;
    }
    if (*grid) return coeff_grid(function, resolution, out_dir);
    if (*eval) return evaluate(model_path, data_path, confidences, out_dir);
    if (*rep) return report(runs, out_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dephn: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
