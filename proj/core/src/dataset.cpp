#include "dephn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace dephn::data {

std::string_view variant_name(Variant v) { return v == Variant::Related ? "related" : "unrelated"; }

Variant parse_variant(std::string_view name) {
  if (name == "related") return Variant::Related;
  if (name == "unrelated") return Variant::Unrelated;
  throw std::invalid_argument("unknown dataset variant: " + std::string(name));
}

std::string_view threshold_name(ThresholdRule r) { return r == ThresholdRule::Zero ? "zero" : "median"; }

ThresholdRule parse_threshold(std::string_view name) {
  if (name == "zero") return ThresholdRule::Zero;
  if (name == "median") return ThresholdRule::Median;
  throw std::invalid_argument("unknown threshold rule: " + std::string(name));
}

features::FieldSchema default_schema() { return features::FieldSchema{{12, 8, 20, 6, 16, 10, 24, 4}, 8}; }

void DatasetSpec::validate() const {
  if (sample_count < 2) throw std::invalid_argument("dataset needs at least 2 samples");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  schema.validate();
}

// --- teacher -------------------------------------------------------------------

TeacherNet::TeacherNet(const features::FieldSchema& schema, const TeacherConfig& config, std::uint64_t seed)
    : schema_(schema), embed_dim_(config.embed_dim), scale_(config.output_scale) {
  schema_.validate();
  Rng rng(seed, 101);
  offsets_.assign(schema_.field_count(), 0);
  std::size_t vocab = 0;
  for (std::size_t j = 0; j < schema_.field_count(); ++j) {
    offsets_[j] = vocab;
    vocab += schema_.cardinalities[j];
  }
  table_.resize(vocab * embed_dim_);
  for (auto& v : table_) v = rng.normal();

  widths_ = config.hidden;
  widths_.push_back(1);
  std::size_t in = schema_.field_count() * embed_dim_;
  for (std::size_t w : widths_) {
    std::vector<double> weight(in * w);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : weight) v = rng.normal(0.0, sd);
    std::vector<double> bias(w);
    for (auto& v : bias) v = rng.normal(0.0, 0.1);
    weights_.push_back(std::move(weight));
    biases_.push_back(std::move(bias));
    in = w;
  }
}

std::vector<double> TeacherNet::raw_outputs(std::span<const std::size_t> features, std::size_t rows) const {
  const std::size_t c = schema_.field_count();
  if (features.size() != rows * c) throw ShapeError("teacher: feature matrix does not match row count");
  std::vector<double> out(rows);
  std::vector<double> x, y;
  for (std::size_t r = 0; r < rows; ++r) {
    x.assign(c * embed_dim_, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t idx = features[r * c + j];
      if (idx >= schema_.cardinalities[j]) throw std::out_of_range("teacher: index outside field f" + std::to_string(j));
      std::copy_n(table_.begin() + static_cast<std::ptrdiff_t>((offsets_[j] + idx) * embed_dim_), embed_dim_,
                  x.begin() + static_cast<std::ptrdiff_t>(j * embed_dim_));
    }
    for (std::size_t l = 0; l < widths_.size(); ++l) {
      const std::size_t in = x.size();
      const std::size_t w = widths_[l];
      y.assign(biases_[l].begin(), biases_[l].end());
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t o = 0; o < w; ++o) y[o] += x[i] * weights_[l][i * w + o];
      }
      if (l + 1 < widths_.size()) {
        for (auto& v : y) v = std::tanh(v);
      }
      x.swap(y);
    }
    out[r] = x[0];
  }
  return out;
}

// --- generation ----------------------------------------------------------------

std::vector<std::size_t> sample_features(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, 1);
  const std::size_t c = spec.schema.field_count();
  std::vector<std::size_t> f(spec.sample_count * c);
  for (std::size_t r = 0; r < spec.sample_count; ++r) {
    for (std::size_t j = 0; j < c; ++j) f[r * c + j] = rng.index(spec.schema.cardinalities[j]);
  }
  return f;
}

namespace {

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sign_of(double c) { return c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> teacher_confidence(std::span<const std::size_t> features, std::size_t rows,
                                       const TeacherNet& teacher) {
  std::vector<double> raw = teacher.raw_outputs(features, rows);
  const double mu = mean_of(raw);
  double var = 0.0;
  for (double v : raw) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(raw.size()));
  for (auto& v : raw) v = teacher.output_scale() * std::tanh(sd > 0.0 ? (v - mu) / sd : 0.0);
  const double centre = mean_of(raw);
  for (auto& v : raw) v -= centre;
  return raw;
}

double related_confidence(double c, double noise) {
  const double a = std::abs(c);
  if (a > 700.0) throw std::overflow_error("related_confidence: |c| = " + std::to_string(a) + " overflows e^|c|");
  return sign_of(c) * 2.0 * std::log(a + 1.0) + 0.1 * std::exp(a) + noise;
}

std::vector<double> related_confidence(std::span<const double> c, double noise_std, Rng& rng) {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double eps = noise_std > 0.0 ? rng.normal(0.0, noise_std) : 0.0;
    out[i] = related_confidence(c[i], eps);
  }
  return out;
}

double unrelated_confidence(double c) {
  const double a = std::abs(c);
  return sign_of(c) * (2.0 * std::sin(a) + 0.1 * std::cos(a));
}

std::vector<double> unrelated_confidence(std::span<const double> c) {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = unrelated_confidence(c[i]);
  return out;
}

std::vector<double> binarize(std::span<const double> values, ThresholdRule rule) {
  double threshold = 0.0;
  if (rule == ThresholdRule::Median && !values.empty()) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    threshold = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] > threshold ? 1.0 : 0.0;
  return out;
}

double measure_task_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("correlation: need at least two samples");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("correlation: zero variance (degenerate teacher)");
  return sab / std::sqrt(saa * sbb);
}

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  LabeledDataset ds;
  ds.schema = spec.schema;
  ds.rows = spec.sample_count;
  ds.features = sample_features(spec);
  const TeacherNet teacher(spec.schema, spec.teacher, spec.seed);
  std::vector<double> base = teacher_confidence(ds.features, ds.rows, teacher);
  std::vector<double> task;
  if (spec.variant == Variant::Related) {
    Rng noise(spec.seed, 2);
    task = related_confidence(base, spec.noise_std, noise);
  } else {
    task = unrelated_confidence(base);
  }
  ds.labels.push_back(binarize(base, spec.threshold));
  ds.labels.push_back(binarize(task, spec.threshold));
  ds.confidences.push_back(std::move(base));
  ds.confidences.push_back(std::move(task));
  return ds;
}

// --- dataset views -------------------------------------------------------------

features::FieldBatch LabeledDataset::batch(std::span<const std::size_t> row_ids) const {
  features::FieldBatch b;
  b.rows = row_ids.size();
  b.fields = schema.field_count();
  b.indices.resize(b.rows * b.fields);
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(row_ids[i] * b.fields), b.fields,
                b.indices.begin() + static_cast<std::ptrdiff_t>(i * b.fields));
  }
  return b;
}

features::FieldBatch LabeledDataset::all_rows() const {
  return features::FieldBatch{rows, schema.field_count(), features};
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> row_ids) const {
  LabeledDataset out;
  out.schema = schema;
  out.rows = row_ids.size();
  out.features = batch(row_ids).indices;
  auto pick = [&](const std::vector<std::vector<double>>& src) {
    std::vector<std::vector<double>> dst(src.size());
    for (std::size_t t = 0; t < src.size(); ++t) {
      dst[t].reserve(row_ids.size());
      for (auto r : row_ids) dst[t].push_back(src[t][r]);
    }
    return dst;
  };
  out.labels = pick(labels);
  out.confidences = pick(confidences);
  return out;
}

DatasetSplit split_dataset(const LabeledDataset& ds, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(ds.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, 3);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(ds.rows) * validation_fraction));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return DatasetSplit{ds.subset(train), ds.subset(val)};
}

// --- files ---------------------------------------------------------------------

void write_dataset_csv(std::ostream& os, const LabeledDataset& ds) {
  const std::size_t c = ds.schema.field_count();
  for (std::size_t j = 0; j < c; ++j) os << (j ? "," : "") << 'f' << j;
  for (std::size_t t = 0; t < ds.task_count(); ++t) os << ",y" << t;
  os << '\n';
  for (std::size_t r = 0; r < ds.rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) os << (j ? "," : "") << ds.features[r * c + j];
    for (std::size_t t = 0; t < ds.task_count(); ++t) os << ',' << (ds.labels[t][r] > 0.5 ? 1 : 0);
    os << '\n';
  }
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open " + path.string() + " for writing");
  write_dataset_csv(os, ds);
}

void write_confidence_csv(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open " + path.string() + " for writing");
  for (std::size_t t = 0; t < ds.confidences.size(); ++t) os << (t ? "," : "") << 'c' << t;
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < ds.rows; ++r) {
    for (std::size_t t = 0; t < ds.confidences.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.confidences[t][r]);
      os << (t ? "," : "") << buf;
    }
    os << '\n';
  }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

LabeledDataset load_csv_dataset(std::istream& is, const features::FieldSchema& schema) {
  schema.validate();
  const std::size_t c = schema.field_count();
  std::string line;
  if (!std::getline(is, line)) throw DatasetError("line 1: missing header");
  const auto header = split_commas(trim_cr(line));
  std::string expected;
  for (std::size_t j = 0; j < c; ++j) expected += (j ? ",f" : "f") + std::to_string(j);
  std::size_t tasks = 0;
  bool ok = header.size() > c;
  for (std::size_t j = 0; ok && j < c; ++j) ok = header[j] == "f" + std::to_string(j);
  for (std::size_t t = 0; ok && c + t < header.size(); ++t, ++tasks) ok = header[c + t] == "y" + std::to_string(t);
  if (!ok) {
    throw DatasetError("line 1: header mismatch, expected " + expected + ",y0[,y1...] but got '" +
                       std::string(trim_cr(line)) + "'");
  }

  LabeledDataset ds;
  ds.schema = schema;
  ds.labels.assign(tasks, {});
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    const auto cells = split_commas(view);
    if (cells.size() != c + tasks) {
      throw DatasetError("line " + std::to_string(line_no) + ": expected " + std::to_string(c + tasks) +
                         " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t idx = 0;
      if (!parse_number(cells[j], idx)) {
        throw DatasetError("line " + std::to_string(line_no) + ": field f" + std::to_string(j) + " is not a non-negative integer");
      }
      if (idx >= schema.cardinalities[j]) {
        throw DatasetError("line " + std::to_string(line_no) + ": field f" + std::to_string(j) + " index " +
                           std::to_string(idx) + " outside vocabulary of size " + std::to_string(schema.cardinalities[j]));
      }
      ds.features.push_back(idx);
    }
    for (std::size_t t = 0; t < tasks; ++t) {
      int y = -1;
      if (!parse_number(cells[c + t], y) || (y != 0 && y != 1)) {
        throw DatasetError("line " + std::to_string(line_no) + ": label y" + std::to_string(t) + " must be 0 or 1");
      }
      ds.labels[t].push_back(static_cast<double>(y));
    }
    ++ds.rows;
  }
  return ds;
}

LabeledDataset load_csv_dataset(const std::filesystem::path& path, const features::FieldSchema& schema,
                                const std::filesystem::path& confidence_path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open dataset file " + path.string());
  LabeledDataset ds = load_csv_dataset(is, schema);
  if (confidence_path.empty() || !std::filesystem::exists(confidence_path)) return ds;

  std::ifstream cs(confidence_path, std::ios::binary);
  std::string line;
  std::getline(cs, line);
  const std::size_t cols = split_commas(trim_cr(line)).size();
  ds.confidences.assign(cols, {});
  std::size_t line_no = 1;
  while (std::getline(cs, line)) {
    ++line_no;
    if (trim_cr(line).empty()) continue;
    const auto cells = split_commas(trim_cr(line));
    if (cells.size() != cols) throw DatasetError(confidence_path.string() + " line " + std::to_string(line_no) + ": column count");
    for (std::size_t t = 0; t < cols; ++t) {
      double v = 0.0;
      if (!parse_number(cells[t], v)) {
        throw DatasetError(confidence_path.string() + " line " + std::to_string(line_no) + ": not a number");
      }
      ds.confidences[t].push_back(v);
    }
  }
  for (const auto& col : ds.confidences) {
    if (col.size() != ds.rows) throw DatasetError(confidence_path.string() + ": row count differs from dataset");
  }
  return ds;
}

std::string dataset_manifest_json(const DatasetSpec& spec, const LabeledDataset& ds) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["variant"] = std::string(variant_name(spec.variant));
  j["rows"] = ds.rows;
  j["field_count"] = spec.schema.field_count();
  j["cardinalities"] = spec.schema.cardinalities;
  j["embed_dim"] = spec.schema.embed_dim;
  j["tasks"] = ds.task_count();
  j["noise_std"] = spec.noise_std;
  j["threshold_rule"] = std::string(threshold_name(spec.threshold));
  j["teacher"] = {{"embed_dim", spec.teacher.embed_dim},
                  {"hidden", spec.teacher.hidden},
                  {"output_scale", spec.teacher.output_scale},
                  {"activation", "tanh"}};
  if (ds.confidences.size() >= 2) j["correlation"] = measure_task_correlation(ds.confidences[0], ds.confidences[1]);
  std::vector<double> positive_rate;
  for (const auto& l : ds.labels) positive_rate.push_back(std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(ds.rows));
  j["positive_rate"] = positive_rate;
  j["design_choices"] = {"teacher architecture is a chosen default", "binarization threshold is a chosen default"};
  return j.dump(2) + "\n";
}

features::FieldSchema schema_from_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DatasetError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    is >> j;
    features::FieldSchema schema;
    schema.cardinalities = j.at("cardinalities").get<std::vector<std::size_t>>();
    schema.embed_dim = j.value("embed_dim", std::size_t{8});
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("manifest " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace dephn::data
