#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dephn/config.hpp"
#include "dephn/dataset.hpp"
#include "dephn/reports.hpp"
#include "dephn/trainer.hpp"

namespace dephn::harness {

struct RunResult {
  ArtifactTag tag;
  std::vector<TaskMetrics> metrics;
  std::vector<std::vector<double>> train_loss;       // [epoch][task]
  std::vector<std::vector<double>> validation_loss;  // [epoch][task]
  double train_seconds = 0.0;
  std::vector<std::filesystem::path> artifacts;
};

/// Generates or loads the dataset named by the config and splits it with the data seed.
data::DatasetSplit prepare_data(const TrainConfig& config);

/// Labels of the first `tasks` tasks for the given rows.
std::vector<std::vector<double>> batch_labels(const data::LabeledDataset& ds, std::span<const std::size_t> rows,
                                              std::size_t tasks);

/// Trains for the configured epochs, evaluating on the validation split after
/// every epoch. When `trainer_out` is set it receives the trained model.
RunResult train_and_evaluate(const TrainConfig& config, const data::DatasetSplit& split,
                             std::unique_ptr<Trainer>* trainer_out = nullptr);

/// Full run: train, evaluate and write every artifact into `out_dir`:
/// metrics.csv, gates.csv, ssg.csv, activation_ratio.csv, loss_curve.csv,
/// confidence_scatter.csv, timing.csv, config.json and model.json.
/// `split` overrides the dataset named by the config.
RunResult run_experiment(const TrainConfig& config, const std::filesystem::path& out_dir,
                         const data::DatasetSplit* split = nullptr);

struct SweepRow {
  vg::SimilarityMeasure measure;
  vg::CoefficientFunction function;
  RunResult run;
};

/// Every coefficient function under every similarity measure, one run each in
/// `out_dir/<measure>-<function>`, plus `out_dir/sweep.csv` with one row per run.
std::vector<SweepRow> run_sweep(const TrainConfig& base, const std::filesystem::path& out_dir,
                                const data::DatasetSplit* split = nullptr);

/// Parameters, config and schema of a trained model as JSON.
void save_model(const std::filesystem::path& path, const Trainer& trainer);
std::unique_ptr<Trainer> load_model(const std::filesystem::path& path);

}  // namespace dephn::harness
