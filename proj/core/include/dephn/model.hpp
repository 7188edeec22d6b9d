#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dephn/experts.hpp"
#include "dephn/features.hpp"
#include "dephn/ops.hpp"

namespace dephn::model {

// --- explicit mappings -------------------------------------------------------

enum class Mapping { Raw, Sin, Cos };
using MappingSet = std::vector<Mapping>;

std::string_view mapping_name(Mapping m);
Mapping parse_mapping(std::string_view name);
inline MappingSet default_mappings() { return {Mapping::Raw, Mapping::Sin, Mapping::Cos}; }

ad::Var apply_mapping(ad::Var expert_out, Mapping m);
/// One output per mapping, in set order. Raw returns the input node itself.
std::vector<ad::Var> apply_mappings(ad::Var expert_out, const MappingSet& set);

// --- gating ------------------------------------------------------------------

enum class GatingMode { TrainableValue, Mapping };  // TVG, MG
enum class CombineMode { LogitSum, Literal };

std::string_view gating_mode_name(GatingMode m);
GatingMode parse_gating_mode(std::string_view name);
std::string_view combine_mode_name(CombineMode m);
CombineMode parse_combine_mode(std::string_view name);

/// Gate values G[t][k][p]. TVG keeps one trainable scalar per entry behind a
/// sigmoid; MG computes a per-sample softmax over the K*P entries from z_pub.
class GateTable {
 public:
  GateTable(GatingMode mode, std::size_t tasks, std::size_t experts, std::size_t mappings, std::size_t input_dim);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;

  /// TVG: sigmoid of the raw table, [T x K x P]. Not defined for MG.
  ad::Var tvg_values(ad::Tape& tape) const;
  /// Gate values of one task: TVG [K*P x 1] (constant over the batch), MG [B x K*P].
  ad::Var task_values(ad::Tape& tape, ad::Var z_pub, std::size_t task) const;

  GatingMode mode() const { return mode_; }
  std::size_t tasks() const { return tasks_; }
  std::size_t experts() const { return experts_; }
  std::size_t mappings() const { return mappings_; }
  std::size_t entries_per_task() const { return experts_ * mappings_; }

  static constexpr const char* kTvgName = "gate.tvg.raw";
  static std::string mg_prefix(std::size_t task) { return "gate.mg.t" + std::to_string(task); }

 private:
  GatingMode mode_;
  std::size_t tasks_;
  std::size_t experts_;
  std::size_t mappings_;
  std::size_t input_dim_;
};

// --- forward results ---------------------------------------------------------

struct ForwardResult {
  std::vector<ad::Var> predictions;  // per task, [B]
  std::vector<ad::Var> logit_pub;    // per task, [B x 1]; the whole logit for single-path models
  std::vector<ad::Var> logit_pri;    // per task, [B x 1]; empty when the model has no private path
  /// Nodes whose backward scale is the virtual gradient coefficient. TVG: one
  /// node [T x K x P]. MG: one node per task, [B x K*P]. Empty when not gated.
  std::vector<ad::Var> modulation_points;
  /// Gate values as seen by the towers: per task, TVG [K*P x 1] or MG [B x K*P].
  std::vector<ad::Var> gates;
};

/// Common interface over the DNN, MMoE-lite, MTPHN and DEPHN variants.
class MultiTaskModel {
 public:
  virtual ~MultiTaskModel() = default;

  virtual std::string_view kind() const = 0;
  virtual std::size_t task_count() const = 0;
  virtual void register_parameters(ad::ParameterStore& store, Rng& rng) const = 0;
  virtual ForwardResult forward(ad::Tape& tape, const features::FieldBatch& batch) const = 0;

  /// Gate table when the model has per-(task, expert, mapping) gates.
  virtual const GateTable* gate_table() const { return nullptr; }
  virtual const MappingSet* mapping_set() const { return nullptr; }
};

// --- DEPHN -------------------------------------------------------------------

struct DephnConfig {
  features::FeaturePipelineConfig pipeline;
  std::size_t tasks = 2;
  experts::ExpertBankConfig bank;
  MappingSet mappings = default_mappings();
  GatingMode gating = GatingMode::TrainableValue;
  CombineMode combine = CombineMode::LogitSum;
  /// Hidden widths of each tower; empty means the linear towers of the public/private logit sums.
  std::vector<std::size_t> tower_hidden;
};

/// Heterogeneous public/private experts, explicit mappings of the public
/// outputs, per-task gates and per-task towers. With P = 1 (raw mapping) and
/// MG gating this is the MTPHN variant.
class Dephn : public MultiTaskModel {
 public:
  explicit Dephn(DephnConfig config, std::string kind = "dephn");

  std::string_view kind() const override { return kind_; }
  std::size_t task_count() const override { return config_.tasks; }
  void register_parameters(ad::ParameterStore& store, Rng& rng) const override;
  ForwardResult forward(ad::Tape& tape, const features::FieldBatch& batch) const override;
  const GateTable* gate_table() const override { return &gates_; }
  const MappingSet* mapping_set() const override { return &config_.mappings; }

  const DephnConfig& config() const { return config_; }
  const experts::ExpertBank& bank() const { return bank_; }
  const features::FeaturePipeline& pipeline() const { return pipeline_; }

  /// Public logit of one task from the mapped public outputs [B x K*P x d_e] and its gate values.
  ad::Var assemble_public_logit(ad::Tape& tape, ad::Var mapped, ad::Var gate, std::size_t task) const;
  /// Private logit for one task.
  ad::Var assemble_private_logit(ad::Tape& tape, const std::vector<ad::Var>& private_outputs, std::size_t batch,
                                 std::size_t task) const;

  static std::string tower_prefix(std::size_t task, std::string_view path) {
    return "tower.t" + std::to_string(task) + "." + std::string(path);
  }

 private:
  DephnConfig config_;
  std::string kind_;
  features::FeaturePipeline pipeline_;
  experts::ExpertBank bank_;
  GateTable gates_;
};

/// MTPHN preset: DEPHN without explicit mappings (raw only) and with MMoE-style
/// softmax gates over the public experts.
DephnConfig mtphn_config(DephnConfig base);

// --- MMoE-lite ---------------------------------------------------------------

struct MmoeConfig {
  features::FieldSchema schema;
  std::size_t tasks = 2;
  std::size_t experts = 3;
  experts::ExpertShape shape;
  std::vector<std::size_t> tower_hidden;
};

/// Classic mixture of shared DNN experts with one softmax gate per task.
/// Embeddings and experts use the same parameter names as DEPHN's public path.
class MmoeLite : public MultiTaskModel {
 public:
  explicit MmoeLite(MmoeConfig config);

  std::string_view kind() const override { return "mmoe"; }
  std::size_t task_count() const override { return config_.tasks; }
  void register_parameters(ad::ParameterStore& store, Rng& rng) const override;
  ForwardResult forward(ad::Tape& tape, const features::FieldBatch& batch) const override;

  static std::string gate_prefix(std::size_t task) { return "gate.mmoe.t" + std::to_string(task); }
  static std::string tower_prefix(std::size_t task) { return "tower.t" + std::to_string(task) + ".mmoe"; }

 private:
  MmoeConfig config_;
  std::vector<std::unique_ptr<experts::Expert>> experts_;
};

// --- single-task DNN ---------------------------------------------------------

struct DnnBaselineConfig {
  features::FieldSchema schema;
  std::size_t tasks = 2;
  std::vector<std::size_t> hidden{64, 32};
};

/// One fully independent embedding + MLP per task.
class DnnBaseline : public MultiTaskModel {
 public:
  explicit DnnBaseline(DnnBaselineConfig config);

  std::string_view kind() const override { return "dnn"; }
  std::size_t task_count() const override { return config_.tasks; }
  void register_parameters(ad::ParameterStore& store, Rng& rng) const override;
  ForwardResult forward(ad::Tape& tape, const features::FieldBatch& batch) const override;

 private:
  DnnBaselineConfig config_;
};

// --- combination and diagnostics --------------------------------------------

/// LogitSum: sigmoid(pub + pri), a probability. Literal: sigmoid(pub) + sigmoid(pri), in (0, 2).
ad::Var combine_predictions(ad::Var logit_pub, ad::Var logit_pri, CombineMode mode);

/// Per task, mean|logit_pub| / (mean|logit_pub| + mean|logit_pri|); 0.5 when both are zero.
std::vector<double> public_private_activation_ratio(const ForwardResult& result);

/// Immutable copy of gate values, [T x K x P]. MG gates are averaged over the batch.
Tensor gate_snapshot(const ForwardResult& result, const GateTable& table);

}  // namespace dephn::model
