#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dephn/ops.hpp"
#include "dephn/parameters.hpp"
#include "dephn/random.hpp"

namespace dephn::features {

struct FieldSchema {
  std::vector<std::size_t> cardinalities;
  std::size_t embed_dim = 8;

  std::size_t field_count() const { return cardinalities.size(); }
  std::size_t flat_dim() const { return field_count() * embed_dim; }
  /// Throws std::invalid_argument unless c >= 1, every cardinality >= 2 and d_f >= 1.
  void validate() const;
};

/// Row-major [rows x fields] categorical indices.
struct FieldBatch {
  std::size_t rows = 0;
  std::size_t fields = 0;
  std::vector<std::size_t> indices;

  std::size_t at(std::size_t r, std::size_t f) const { return indices[r * fields + f]; }
};

/// Parallel interaction structures that each own a soft selection gate.
enum class Branch { Cross, Field, Dnn };
inline constexpr std::array<Branch, 3> kBranches{Branch::Cross, Branch::Field, Branch::Dnn};
std::string_view branch_name(Branch b);

enum class SsgGranularity { PerCoordinate, PerField };

// --- embedding --------------------------------------------------------------

/// Registers one table holding every field's vocabulary back to back:
/// [sum(cardinalities) x d_f] under "<prefix>.table".
void register_embeddings(ad::ParameterStore& store, const FieldSchema& schema, Rng& rng,
                         const std::string& prefix = "embedding", double init_stddev = 0.1);

/// [B x c x d_f] lookup. Throws std::out_of_range naming the field on an
/// out-of-vocabulary index.
ad::Var embed_batch(ad::Tape& tape, const FieldSchema& schema, const FieldBatch& batch,
                    const std::string& prefix = "embedding");

// --- multi-head self attention ----------------------------------------------

/// Scaled dot-product attention across the c field positions of each sample,
/// without positional encoding. Parameters live under "<prefix>.{query,key,value,output}.{weight,bias}".
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention(std::string prefix, std::size_t embed_dim, std::size_t heads);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  ad::Var forward(ad::Tape& tape, ad::Var embeddings) const;

  std::size_t heads() const { return heads_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  std::size_t embed_dim_;
  std::size_t heads_;
};

// --- soft selection gating --------------------------------------------------

/// E_sg = g * E_SA + (1 - g) * E with g = sigmoid(raw_gate), raw_gate broadcast over the batch.
ad::Var soft_selection_gate(ad::Var raw, ad::Var attended, ad::Var raw_gate);

std::string ssg_parameter_name(Branch b);
Shape ssg_shape(const FieldSchema& schema, SsgGranularity granularity);

/// [B x c x d_f] -> [B x (c * d_f)], field-major.
ad::Var flatten_fields(ad::Var fields);
/// Inverse of flatten_fields.
ad::Var unflatten_fields(ad::Var flat, std::size_t field_count, std::size_t embed_dim);

// --- pipeline ---------------------------------------------------------------

struct FeaturePipelineConfig {
  FieldSchema schema;
  std::size_t heads = 2;
  SsgGranularity granularity = SsgGranularity::PerCoordinate;
  /// When false the attention block and SSG are skipped and every branch sees raw embeddings.
  bool self_attention = true;
};

struct BranchInputs {
  ad::Var raw;        // E, [B x c x d_f]
  ad::Var attended;   // E_SA, [B x c x d_f]; equals `raw` when attention is disabled
  ad::Var dnn_flat;   // z_pub
  ad::Var cross_flat; // z_pri for cross experts
  ad::Var field_grid; // [B x c x d_f] for field experts
};

class FeaturePipeline {
 public:
  explicit FeaturePipeline(FeaturePipelineConfig config);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  BranchInputs forward(ad::Tape& tape, const FieldBatch& batch) const;

  const FeaturePipelineConfig& config() const { return config_; }

 private:
  FeaturePipelineConfig config_;
  MultiHeadSelfAttention attention_;
};

}  // namespace dephn::features
