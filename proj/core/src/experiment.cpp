#include "dephn/experiment.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dephn/metrics.hpp"
#include "json.hpp"

namespace dephn::harness {

data::DatasetSplit prepare_data(const TrainConfig& config) {
  data::LabeledDataset ds;
  if (config.data.csv.empty()) {
    data::DatasetSpec spec;
    spec.sample_count = config.data.samples;
    spec.seed = config.data.seed;
    spec.noise_std = config.data.noise_std;
    spec.variant = config.data.variant;
    spec.threshold = config.data.threshold;
    spec.teacher.output_scale = config.data.teacher_scale;
    ds = data::generate_dataset(spec);
  } else {
    features::FieldSchema schema = resolve_schema(config);
    ds = data::load_csv_dataset(config.data.csv, schema, config.data.confidences);
  }
  ds.schema.embed_dim = config.arch.embed_dim;
  if (ds.task_count() < config.tasks) {
    throw ConfigError("dataset has " + std::to_string(ds.task_count()) + " label columns but the config asks for " +
                      std::to_string(config.tasks) + " tasks");
  }
  return data::split_dataset(ds, config.data.validation_fraction, config.data.seed);
}

std::vector<std::vector<double>> batch_labels(const data::LabeledDataset& ds, std::span<const std::size_t> rows,
                                              std::size_t tasks) {
  std::vector<std::vector<double>> out(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    out[t].reserve(rows.size());
    for (auto r : rows) out[t].push_back(ds.labels.at(t)[r]);
  }
  return out;
}

namespace {

std::vector<double> validation_losses(const Predictions& p, const data::LabeledDataset& ds) {
  std::vector<double> out;
  for (std::size_t t = 0; t < p.probabilities.size(); ++t) out.push_back(metrics::logloss(p.probabilities[t], ds.labels[t]));
  return out;
}

}  // namespace

RunResult train_and_evaluate(const TrainConfig& config, const data::DatasetSplit& split,
                             std::unique_ptr<Trainer>* trainer_out) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto trainer = std::make_unique<Trainer>(config, split.train.schema);
  RunResult result;
  result.tag = ArtifactTag{config_hash(config), config.seed};

  const data::LabeledDataset& train = split.train;
  std::vector<std::size_t> order(train.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> ids;
  Predictions last;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(config.seed, 1000 + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    std::vector<double> sums(config.tasks, 0.0);
    std::size_t seen = 0, steps = 0;
    for (std::size_t s = 0; s < train.rows; s += config.batch_size) {
      if (config.max_steps_per_epoch && steps == config.max_steps_per_epoch) break;
      const std::size_t n = std::min(config.batch_size, train.rows - s);
      ids.assign(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(s + n));
      const StepResult step = trainer->train_step(train.batch(ids), batch_labels(train, ids, config.tasks));
      for (std::size_t t = 0; t < config.tasks; ++t) sums[t] += step.task_losses[t] * static_cast<double>(n);
      seen += n;
      ++steps;
    }
    for (auto& v : sums) v /= static_cast<double>(seen);
    result.train_loss.push_back(sums);
    last = trainer->predict(split.validation);
    result.validation_loss.push_back(validation_losses(last, split.validation));
  }
  result.metrics = evaluate_predictions(last, split.validation);
  result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trainer_out != nullptr) *trainer_out = std::move(trainer);
  return result;
}

RunResult run_experiment(const TrainConfig& config, const std::filesystem::path& out_dir,
                         const data::DatasetSplit* split) {
  data::DatasetSplit owned;
  if (split == nullptr) {
    owned = prepare_data(config);
    split = &owned;
  }
  std::filesystem::create_directories(out_dir);
  std::unique_ptr<Trainer> trainer;
  RunResult result = train_and_evaluate(config, *split, &trainer);
  const Predictions pred = trainer->predict(split->validation);
  const ArtifactTag& tag = result.tag;

  auto emit = [&](const char* name) {
    result.artifacts.push_back(out_dir / name);
    return out_dir / name;
  };
  write_metrics_csv(emit("metrics.csv"), tag, model_kind_name(config.model), result.metrics);
  write_gate_csv(emit("gates.csv"), tag, trainer->model(), pred.gate_mean);
  write_ssg_csv(emit("ssg.csv"), tag, trainer->store(), trainer->schema());
  write_activation_csv(emit("activation_ratio.csv"), tag, pred);
  write_loss_curve_csv(emit("loss_curve.csv"), tag, model::gating_mode_name(config.gating), result.train_loss,
                       result.validation_loss);
  write_scatter_csv(emit("confidence_scatter.csv"), tag, split->validation, pred);
  write_timing_csv(emit("timing.csv"), tag, result.train_seconds);

  {
    nlohmann::ordered_json echo;
    echo["config_hash"] = tag.config_hash;
    echo["seed"] = tag.seed;
    echo["config"] = nlohmann::json::parse(config_to_json(config));
    std::ofstream os(emit("config.json"), std::ios::binary);
    os << echo.dump(2) << '\n';
  }
  save_model(emit("model.json"), *trainer);
  return result;
}

std::vector<SweepRow> run_sweep(const TrainConfig& base, const std::filesystem::path& out_dir,
                                const data::DatasetSplit* split) {
  data::DatasetSplit owned;
  if (split == nullptr) {
    owned = prepare_data(base);
    split = &owned;
  }
  std::filesystem::create_directories(out_dir);
  std::vector<SweepRow> rows;
  for (auto measure : vg::kAllMeasures) {
    for (auto function : vg::kAllFunctions) {
      TrainConfig c = base;
      c.measure = measure;
      c.function = function;
      const std::string name = std::string(vg::measure_name(measure)) + "-" + std::string(vg::function_name(function));
      rows.push_back(SweepRow{measure, function, run_experiment(c, out_dir / name, split)});
    }
  }

  std::ofstream os(out_dir / "sweep.csv", std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + (out_dir / "sweep.csv").string() + " for writing");
  os << "config_hash,seed,measure,function";
  for (std::size_t t = 0; t < base.tasks; ++t) os << ",logloss" << t << ",auc" << t;
  os << '\n';
  const std::string base_hash = config_hash(base);
  for (const auto& r : rows) {
    os << base_hash << ',' << base.seed << ',' << vg::measure_name(r.measure) << ',' << vg::function_name(r.function);
    for (const auto& m : r.run.metrics) os << ',' << format_double(m.logloss) << ',' << (m.auc ? format_double(*m.auc) : "");
    os << '\n';
  }
  return rows;
}

void save_model(const std::filesystem::path& path, const Trainer& trainer) {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::json::parse(config_to_json(trainer.config()));
  j["schema"] = {{"cardinalities", trainer.schema().cardinalities}, {"embed_dim", trainer.schema().embed_dim}};
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : trainer.store().all()) {
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
  }
  j["parameters"] = params;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << j.dump() << '\n';
}

std::unique_ptr<Trainer> load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    const TrainConfig config = config_from_json(j.at("config").dump());
    features::FieldSchema schema;
    schema.cardinalities = j.at("schema").at("cardinalities").get<std::vector<std::size_t>>();
    schema.embed_dim = j.at("schema").at("embed_dim").get<std::size_t>();
    auto trainer = std::make_unique<Trainer>(config, schema);
    for (const auto& p : j.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      Tensor& value = trainer->store().value(name);
      const auto values = p.at("values").get<std::vector<double>>();
      if (values.size() != value.size()) throw std::runtime_error("parameter " + name + " has the wrong size");
      value = Tensor(value.shape(), values);
    }
    return trainer;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file " + path.string() + ": " + e.what());
  }
}

}  // namespace dephn::harness
