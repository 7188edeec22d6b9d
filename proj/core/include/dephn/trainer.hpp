#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dephn/config.hpp"
#include "dephn/dataset.hpp"
#include "dephn/model.hpp"
#include "dephn/optimizer.hpp"
#include "dephn/parameters.hpp"

namespace dephn::harness {

/// A training step produced a NaN or infinite loss; the message carries the per-task losses.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::unique_ptr<model::MultiTaskModel> build_model(const TrainConfig& config, const features::FieldSchema& schema);

struct StepResult {
  std::vector<double> task_losses;
  double total_loss = 0.0;
  /// Coefficients applied this step, [T x K x P]; empty when the model has no gates.
  Tensor gamma;
};

/// Per-row model outputs over a whole dataset.
struct Predictions {
  std::vector<std::vector<double>> probabilities;  // per task
  std::vector<std::vector<double>> logit_pub;      // per task
  std::vector<std::vector<double>> logit_pri;      // per task; zeros when the model has no private path
  bool has_private = false;
  /// Mean gate values over the rows, [T x K x P]; empty when the model has no gates.
  Tensor gate_mean;
};

/// Owns a model, its parameters and the optimizer state for one run.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const features::FieldSchema& schema);

  /// Forward, per-task logloss summed, virtual gradient coefficients set on the
  /// gate nodes, backward and one Adam update. `labels[t]` holds the batch labels of task t.
  StepResult train_step(const features::FieldBatch& batch, const std::vector<std::vector<double>>& labels);

  /// Gradients of one step without touching the parameters; used by audits.
  ad::Gradients gradients(const features::FieldBatch& batch, const std::vector<std::vector<double>>& labels,
                          StepResult* result = nullptr) const;

  Predictions predict(const data::LabeledDataset& ds, std::size_t chunk = 1024) const;

  const TrainConfig& config() const { return config_; }
  const features::FieldSchema& schema() const { return schema_; }
  const model::MultiTaskModel& model() const { return *model_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }

 private:
  TrainConfig config_;
  features::FieldSchema schema_;
  std::unique_ptr<model::MultiTaskModel> model_;
  ad::ParameterStore store_;
  optim::Adam adam_;
};

/// Computes the coefficient table for one batch from its labels and the forward's gate snapshot.
Tensor step_gamma(const TrainConfig& config, const model::ForwardResult& forward, const model::GateTable& table,
                  const std::vector<std::vector<double>>& labels);

}  // namespace dephn::harness
