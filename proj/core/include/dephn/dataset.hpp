#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dephn/features.hpp"
#include "dephn/random.hpp"

namespace dephn::data {

enum class Variant { Related, Unrelated };
enum class ThresholdRule { Zero, Median };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
std::string_view threshold_name(ThresholdRule r);
ThresholdRule parse_threshold(std::string_view name);

/// Error raised while reading a dataset file; carries the 1-based line when known.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

features::FieldSchema default_schema();

struct TeacherConfig {
  std::size_t embed_dim = 4;
  std::vector<std::size_t> hidden{32, 16};
  /// Confidences are output_scale * tanh(standardized teacher output), then centered.
  double output_scale = 3.5;
};

struct DatasetSpec {
  std::size_t sample_count = 50000;
  features::FieldSchema schema = default_schema();
  std::uint64_t seed = 7;
  double noise_std = 0.1;
  Variant variant = Variant::Related;
  ThresholdRule threshold = ThresholdRule::Zero;
  TeacherConfig teacher;

  void validate() const;
};

/// Frozen random MLP over its own random field embeddings; tanh hidden units.
class TeacherNet {
 public:
  TeacherNet(const features::FieldSchema& schema, const TeacherConfig& config, std::uint64_t seed);

  /// Raw scalar output per row of a row-major [N x c] index matrix.
  std::vector<double> raw_outputs(std::span<const std::size_t> features, std::size_t rows) const;
  double output_scale() const { return scale_; }

 private:
  features::FieldSchema schema_;
  std::size_t embed_dim_;
  double scale_;
  std::vector<std::size_t> offsets_;
  std::vector<double> table_;
  std::vector<std::size_t> widths_;           // layer output widths, last is 1
  std::vector<std::vector<double>> weights_;  // [in x out], row-major
  std::vector<std::vector<double>> biases_;
};

struct LabeledDataset {
  features::FieldSchema schema;
  std::size_t rows = 0;
  std::vector<std::size_t> features;               // row-major [rows x c]
  std::vector<std::vector<double>> confidences;    // per task; empty when loaded without them
  std::vector<std::vector<double>> labels;         // per task, values in {0, 1}

  std::size_t task_count() const { return labels.size(); }
  features::FieldBatch batch(std::span<const std::size_t> row_ids) const;
  features::FieldBatch all_rows() const;
  LabeledDataset subset(std::span<const std::size_t> row_ids) const;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset validation;
};

// --- generation ----------------------------------------------------------------

/// Seeded uniform categorical draws, [N x c] row-major.
std::vector<std::size_t> sample_features(const DatasetSpec& spec);

/// Teacher confidence per row: scaled tanh of the standardized teacher output, mean-centered.
std::vector<double> teacher_confidence(std::span<const std::size_t> features, std::size_t rows,
                                       const TeacherNet& teacher);

/// sign(c) * 2 ln(|c| + 1) + 0.1 e^{|c|} + eps, eps ~ N(0, noise_std^2), sign(0) = 0.
/// Throws std::overflow_error when e^{|c|} would overflow.
std::vector<double> related_confidence(std::span<const double> c, double noise_std, Rng& rng);
double related_confidence(double c, double noise);

/// sign(c) * (2 sin|c| + 0.1 cos|c|), sign(0) = 0.
std::vector<double> unrelated_confidence(std::span<const double> c);
double unrelated_confidence(double c);

/// Zero rule: 1 iff value > 0. Median rule: 1 iff value > sample median.
std::vector<double> binarize(std::span<const double> values, ThresholdRule rule);

/// Pearson correlation. Throws std::invalid_argument on zero variance or fewer than two samples.
double measure_task_correlation(std::span<const double> a, std::span<const double> b);

/// Two-task dataset: task 0 from the base confidence, task 1 from the related or unrelated transform.
LabeledDataset generate_dataset(const DatasetSpec& spec);

/// Deterministic seeded shuffle, then the first round(N * validation_fraction) rows go to validation.
DatasetSplit split_dataset(const LabeledDataset& ds, double validation_fraction, std::uint64_t seed);

// --- files ---------------------------------------------------------------------

/// Header f0..f{c-1},y0..y{T-1}; '\n' line endings.
void write_dataset_csv(std::ostream& os, const LabeledDataset& ds);
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& ds);

/// Header c0..c{T-1}; one row per sample, 17 significant digits.
void write_confidence_csv(const std::filesystem::path& path, const LabeledDataset& ds);

/// Parses a dataset CSV against `schema`. Throws DatasetError naming the line on a
/// malformed row, the field on an out-of-vocabulary index, and the expected
/// header on a mismatch. When `confidence_path` exists it is loaded too.
LabeledDataset load_csv_dataset(const std::filesystem::path& path, const features::FieldSchema& schema,
                                const std::filesystem::path& confidence_path = {});
LabeledDataset load_csv_dataset(std::istream& is, const features::FieldSchema& schema);

/// JSON manifest with seed, variant, measured correlation, cardinalities and row counts.
std::string dataset_manifest_json(const DatasetSpec& spec, const LabeledDataset& ds);
/// Reads the field schema back out of a manifest file.
features::FieldSchema schema_from_manifest(const std::filesystem::path& manifest_path);

}  // namespace dephn::data
