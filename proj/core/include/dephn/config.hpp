#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dephn/dataset.hpp"
#include "dephn/experts.hpp"
#include "dephn/features.hpp"
#include "dephn/model.hpp"
#include "dephn/optimizer.hpp"
#include "dephn/virtual_gradient.hpp"

namespace dephn::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelKind { Dnn, Mmoe, Mtphn, Dephn };
/// Enabled: gate gradients scaled by the virtual gradient coefficient.
/// Disabled: plain backpropagation. ForceOne: the scaling path runs with every coefficient set to 1.
enum class Modulation { Enabled, Disabled, ForceOne };

std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view name);
std::string_view modulation_name(Modulation m);
Modulation parse_modulation(std::string_view name);

struct DataConfig {
  /// Dataset CSV to load. When empty a synthetic dataset is generated.
  std::string csv;
  /// Optional confidences CSV next to a loaded dataset.
  std::string confidences;
  /// Manifest holding the field schema of a loaded dataset.
  std::string manifest;
  data::Variant variant = data::Variant::Unrelated;
  std::size_t samples = 50000;
  std::uint64_t seed = 7;
  double noise_std = 0.1;
  data::ThresholdRule threshold = data::ThresholdRule::Zero;
  double teacher_scale = 3.5;
  double validation_fraction = 0.1;
};

struct ArchitectureConfig {
  std::size_t embed_dim = 8;
  std::size_t heads = 2;
  bool self_attention = true;
  features::SsgGranularity ssg = features::SsgGranularity::PerCoordinate;
  std::vector<experts::ExpertKind> public_experts{experts::ExpertKind::Dnn, experts::ExpertKind::Dnn,
                                                  experts::ExpertKind::Dnn};
  std::vector<experts::ExpertKind> private_experts{experts::ExpertKind::Cross, experts::ExpertKind::Field};
  std::size_t expert_dim = 16;
  std::size_t depth = 2;
  std::vector<std::size_t> dnn_hidden{64, 32};
  experts::CrossMode cross_mode = experts::CrossMode::DcnV2;
  std::vector<std::size_t> tower_hidden;
  /// Hidden widths of the per-task MLPs of the DNN baseline.
  std::vector<std::size_t> baseline_hidden{64, 32};
};

struct TrainConfig {
  ModelKind model = ModelKind::Dephn;
  std::size_t tasks = 2;
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  /// Caps the number of steps per epoch; 0 runs full epochs.
  std::size_t max_steps_per_epoch = 0;
  optim::AdamConfig adam;
  model::GatingMode gating = model::GatingMode::TrainableValue;
  vg::SimilarityMeasure measure = vg::SimilarityMeasure::AbsPearson;
  vg::CoefficientFunction function = vg::CoefficientFunction::AddSqrt;
  model::MappingSet mappings = model::default_mappings();
  model::CombineMode combine = model::CombineMode::LogitSum;
  Modulation modulation = Modulation::Enabled;
  std::uint64_t seed = 1;
  DataConfig data;
  ArchitectureConfig arch;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Canonical JSON text (sorted keys, two-space indent). Every key is written.
std::string config_to_json(const TrainConfig& config);
/// Parses JSON; missing keys keep their defaults and unknown keys are rejected.
TrainConfig config_from_json(std::string_view text);
/// Reads a config file; throws ConfigError naming the path when it cannot be read or parsed.
TrainConfig load_config(const std::filesystem::path& path);

/// 16 hex digits of the FNV-1a hash of the canonical JSON.
std::string config_hash(const TrainConfig& config);

/// Model-side schema: cardinalities from the data, embedding width from the architecture.
features::FieldSchema resolve_schema(const TrainConfig& config);

}  // namespace dephn::harness
