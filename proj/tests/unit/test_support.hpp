#pragma once

#include <cstddef>
#include <vector>

#include "dephn/config.hpp"
#include "dephn/features.hpp"
#include "dephn/random.hpp"

namespace dephn::fixtures {

inline features::FieldSchema small_schema() { return features::FieldSchema{{5, 4, 6, 3}, 4}; }

inline features::FieldBatch random_batch(const features::FieldSchema& schema, std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  features::FieldBatch b;
  b.rows = rows;
  b.fields = schema.field_count();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < b.fields; ++f) b.indices.push_back(rng.index(schema.cardinalities[f]));
  }
  return b;
}

inline std::vector<std::vector<double>> random_labels(std::size_t tasks, std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(tasks);
  for (auto& t : out) {
    for (std::size_t r = 0; r < rows; ++r) t.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
  }
  return out;
}

/// A reduced architecture that keeps every structural feature but trains in milliseconds.
inline harness::TrainConfig small_config(harness::ModelKind kind) {
  harness::TrainConfig c;
  c.model = kind;
  c.arch.embed_dim = 4;
  c.arch.expert_dim = 8;
  c.arch.dnn_hidden = {16, 8};
  c.arch.baseline_hidden = {16, 8};
  c.batch_size = 32;
  c.data.samples = 2000;
  return c;
}

}  // namespace dephn::fixtures
