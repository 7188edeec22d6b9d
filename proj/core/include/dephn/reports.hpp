#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dephn/dataset.hpp"
#include "dephn/model.hpp"
#include "dephn/parameters.hpp"
#include "dephn/trainer.hpp"

namespace dephn::harness {

/// Leading columns shared by every run artifact.
struct ArtifactTag {
  std::string config_hash;
  std::uint64_t seed = 0;
};

struct TaskMetrics {
  std::size_t task = 0;
  double logloss = 0.0;
  std::optional<double> auc;
  /// Why the AUC was omitted, e.g. a single-class validation fold.
  std::string auc_error;
};

/// Logloss and AUC of every task. A single-class task keeps its logloss and
/// records the AUC error instead of throwing.
std::vector<TaskMetrics> evaluate_predictions(const Predictions& predictions, const data::LabeledDataset& ds);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

void write_metrics_csv(const std::filesystem::path& path, const ArtifactTag& tag, std::string_view model,
                       const std::vector<TaskMetrics>& metrics);
/// One row per (task, expert, mapping); header only for models without a gate table.
void write_gate_csv(const std::filesystem::path& path, const ArtifactTag& tag, const model::MultiTaskModel& m,
                    const Tensor& gate_mean);
/// One row per (branch, field, coordinate) holding sigmoid of the SSG parameter;
/// header only for models without SSG.
void write_ssg_csv(const std::filesystem::path& path, const ArtifactTag& tag, const ad::ParameterStore& store,
                   const features::FieldSchema& schema);
void write_activation_csv(const std::filesystem::path& path, const ArtifactTag& tag, const Predictions& predictions);
/// One row per (epoch, task).
void write_loss_curve_csv(const std::filesystem::path& path, const ArtifactTag& tag, std::string_view gating,
                          const std::vector<std::vector<double>>& train_loss,
                          const std::vector<std::vector<double>>& validation_loss);
/// One row per validation sample: teacher confidences next to the model logits.
void write_scatter_csv(const std::filesystem::path& path, const ArtifactTag& tag, const data::LabeledDataset& ds,
                       const Predictions& predictions);
void write_timing_csv(const std::filesystem::path& path, const ArtifactTag& tag, double train_seconds);

/// Reads the metrics.csv of each run directory and renders an aligned table,
/// one line per (run, task). Throws std::runtime_error naming a missing file.
std::string summarize_runs(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace dephn::harness
