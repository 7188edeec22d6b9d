#include "dephn/features.hpp"

#include <cmath>
#include <stdexcept>

namespace dephn::features {

using ad::Var;

void FieldSchema::validate() const {
  if (cardinalities.empty()) throw std::invalid_argument("field schema needs at least one field");
  for (std::size_t j = 0; j < cardinalities.size(); ++j) {
    if (cardinalities[j] < 2) {
      throw std::invalid_argument("field f" + std::to_string(j) + " has cardinality " +
                                  std::to_string(cardinalities[j]) + " (< 2)");
    }
  }
  if (embed_dim < 1) throw std::invalid_argument("embedding dimension must be >= 1");
}

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::Cross: return "cross";
    case Branch::Field: return "field";
    case Branch::Dnn: return "dnn";
  }
  return "?";
}

void register_embeddings(ad::ParameterStore& store, const FieldSchema& schema, Rng& rng, const std::string& prefix,
                         double init_stddev) {
  schema.validate();
  std::size_t vocab = 0;
  for (auto c : schema.cardinalities) vocab += c;
  store.add(prefix + ".table", ad::normal_init({vocab, schema.embed_dim}, init_stddev, rng));
}

Var embed_batch(ad::Tape& tape, const FieldSchema& schema, const FieldBatch& batch, const std::string& prefix) {
  const std::size_t c = schema.field_count();
  if (batch.fields != c) {
    throw ShapeError("batch has " + std::to_string(batch.fields) + " fields, schema has " + std::to_string(c));
  }
  std::vector<std::size_t> offsets(c, 0);
  for (std::size_t j = 1; j < c; ++j) offsets[j] = offsets[j - 1] + schema.cardinalities[j - 1];

  std::vector<std::size_t> rows(batch.rows * c);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t idx = batch.at(r, j);
      if (idx >= schema.cardinalities[j]) {
        throw std::out_of_range("field f" + std::to_string(j) + ": index " + std::to_string(idx) +
                                " outside vocabulary of size " + std::to_string(schema.cardinalities[j]));
      }
      rows[r * c + j] = offsets[j] + idx;
    }
  }
  Var looked_up = ad::gather_rows(tape.parameter(prefix + ".table"), rows);
  return ad::reshape(looked_up, {batch.rows, c, schema.embed_dim});
}

MultiHeadSelfAttention::MultiHeadSelfAttention(std::string prefix, std::size_t embed_dim, std::size_t heads)
    : prefix_(std::move(prefix)), embed_dim_(embed_dim), heads_(heads) {
  if (heads_ == 0 || embed_dim_ % heads_ != 0) {
    throw std::invalid_argument("embedding dimension " + std::to_string(embed_dim_) +
                                " is not divisible by head count " + std::to_string(heads_));
  }
}

void MultiHeadSelfAttention::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim_));
  for (const char* proj : {"query", "key", "value", "output"}) {
    store.add(prefix_ + "." + proj + ".weight", ad::uniform_init({embed_dim_, embed_dim_}, bound, rng));
    store.add(prefix_ + "." + proj + ".bias", Tensor({embed_dim_}, 0.0));
  }
}

Var MultiHeadSelfAttention::forward(ad::Tape& tape, Var embeddings) const {
  const Shape& s = embeddings.shape();
  if (s.size() != 3 || s[2] != embed_dim_) {
    throw ShapeError("attention expects [B x c x " + std::to_string(embed_dim_) + "], got " + shape_to_string(s));
  }
  auto project = [&](const char* name) {
    return ad::matmul(embeddings, tape.parameter(prefix_ + "." + name + ".weight")) +
           tape.parameter(prefix_ + "." + name + ".bias");
  };
  Var q = project("query");
  Var k = project("key");
  Var v = project("value");

  const std::size_t head_dim = embed_dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Var qh = ad::slice_last(q, h * head_dim, head_dim);
    Var kh = ad::slice_last(k, h * head_dim, head_dim);
    Var vh = ad::slice_last(v, h * head_dim, head_dim);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose_last2(kh)), inv_sqrt);
    heads.push_back(ad::matmul(ad::softmax_last(scores), vh));
  }
  Var merged = heads.size() == 1 ? heads[0] : ad::concat_last(heads);
  return ad::matmul(merged, tape.parameter(prefix_ + ".output.weight")) + tape.parameter(prefix_ + ".output.bias");
}

Var soft_selection_gate(Var raw, Var attended, Var raw_gate) {
  if (raw.shape() != attended.shape()) {
    throw ShapeError("soft selection gate: raw " + shape_to_string(raw.shape()) + " vs attended " +
                     shape_to_string(attended.shape()));
  }
  Var g = ad::sigmoid(raw_gate);
  Var keep = ad::add_scalar(ad::scale(g, -1.0), 1.0);
  return g * attended + keep * raw;
}

std::string ssg_parameter_name(Branch b) { return "ssg." + std::string(branch_name(b)) + ".raw"; }

Shape ssg_shape(const FieldSchema& schema, SsgGranularity granularity) {
  return granularity == SsgGranularity::PerCoordinate ? Shape{schema.field_count(), schema.embed_dim}
                                                       : Shape{schema.field_count(), 1};
}

Var flatten_fields(Var fields) {
  const Shape& s = fields.shape();
  if (s.size() != 3) throw ShapeError("flatten_fields expects rank 3, got " + shape_to_string(s));
  return ad::reshape(fields, {s[0], s[1] * s[2]});
}

Var unflatten_fields(Var flat, std::size_t field_count, std::size_t embed_dim) {
  const Shape& s = flat.shape();
  if (s.size() != 2 || s[1] != field_count * embed_dim) {
    throw ShapeError("unflatten_fields: " + shape_to_string(s) + " is not [B x " +
                     std::to_string(field_count * embed_dim) + "]");
  }
  return ad::reshape(flat, {s[0], field_count, embed_dim});
}

FeaturePipeline::FeaturePipeline(FeaturePipelineConfig config)
    : config_(std::move(config)), attention_("attention", config_.schema.embed_dim, config_.heads) {
  config_.schema.validate();
}

void FeaturePipeline::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  register_embeddings(store, config_.schema, rng);
  if (!config_.self_attention) return;
  attention_.register_parameters(store, rng);
  for (Branch b : kBranches) store.add(ssg_parameter_name(b), Tensor(ssg_shape(config_.schema, config_.granularity), 0.0));
}

BranchInputs FeaturePipeline::forward(ad::Tape& tape, const FieldBatch& batch) const {
  BranchInputs in;
  in.raw = embed_batch(tape, config_.schema, batch);
  if (!config_.self_attention) {
    in.attended = in.raw;
    Var flat = flatten_fields(in.raw);
    in.dnn_flat = flat;
    in.cross_flat = flat;
    in.field_grid = in.raw;
    return in;
  }
  // One attention pass shared by all three gates.
  in.attended = attention_.forward(tape, in.raw);
  auto gated = [&](Branch b) {
    return soft_selection_gate(in.raw, in.attended, tape.parameter(ssg_parameter_name(b)));
  };
  in.cross_flat = flatten_fields(gated(Branch::Cross));
  in.field_grid = gated(Branch::Field);
  in.dnn_flat = flatten_fields(gated(Branch::Dnn));
  return in;
}

}  // namespace dephn::features
