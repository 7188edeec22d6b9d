#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dephn/config.hpp"
#include "dephn/experiment.hpp"
#include "dephn/metrics.hpp"
#include "dephn/reports.hpp"
#include "dephn/trainer.hpp"
#include "test_support.hpp"

using namespace dephn;
using namespace dephn::harness;

namespace {

metrics::AucFraction brute_force_auc(const std::vector<double>& s, const std::vector<double>& y) {
  metrics::AucFraction f;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1.0 || y[j] != 0.0) continue;
      f.pairs += 2;
      if (s[i] > s[j]) f.wins += 2;
      if (s[i] == s[j]) f.wins += 1;
    }
  return f;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::filesystem::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dephn_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

TrainConfig tiny_run(ModelKind kind) {
  TrainConfig c = fixtures::small_config(kind);
  c.epochs = 2;
  c.max_steps_per_epoch = 5;
  c.data.samples = 400;
  return c;
}

}  // namespace

TEST(AucTest, DocumentedExamples) {
  EXPECT_DOUBLE_EQ(metrics::auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(metrics::auc(std::vector<double>{0.1, 0.2, 0.3, 0.9}, std::vector<double>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(metrics::auc(std::vector<double>(6, 0.3), std::vector<double>{0, 1, 0, 1, 1, 0}), 0.5);
}

TEST(AucTest, MatchesAllPairsOracleExactly) {
  Rng rng(1);
  for (int instance = 0; instance < 20; ++instance) {
    const std::size_t n = 2 + rng.index(300);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 20.0) / 20.0;  // coarse grid forces ties
      y[i] = i < 2 ? static_cast<double>(i) : (rng.uniform() < 0.4 ? 1.0 : 0.0);
    }
    EXPECT_EQ(metrics::auc_fraction(s, y), brute_force_auc(s, y));
  }
}

TEST(AucTest, SingleClassIsNamedError) {
  EXPECT_THROW(metrics::auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), metrics::SingleClassError);
  EXPECT_THROW(metrics::auc(std::vector<double>{0.1}, std::vector<double>{0, 1}), std::invalid_argument);
}

TEST(LoglossTest, AnalyticAndClamp) {
  EXPECT_DOUBLE_EQ(metrics::logloss(std::vector<double>{0.5}, std::vector<double>{1}), std::log(2.0));
  EXPECT_LT(metrics::logloss(std::vector<double>{1.0, 0.0}, std::vector<double>{1, 0}), 1e-6);
  EXPECT_TRUE(std::isfinite(metrics::logloss(std::vector<double>{0.0}, std::vector<double>{1})));
}

TEST(LoglossTest, MatchesScalarLoop) {
  Rng rng(2);
  std::vector<double> p(500), y(500);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform();
    y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(p[i], 1e-7), 1.0 - 1e-7);
    acc += y[i] == 1.0 ? -std::log(q) : -std::log(1.0 - q);
  }
  EXPECT_NEAR(metrics::logloss(p, y), acc / 500.0, 1e-12);
}

TEST(ConfigTest, JsonRoundTripAndStableHash) {
  TrainConfig c = fixtures::small_config(ModelKind::Mtphn);
  c.function = vg::CoefficientFunction::MulSquare;
  c.modulation = Modulation::ForceOne;
  c.mappings = {model::Mapping::Raw, model::Mapping::Cos};
  const TrainConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  TrainConfig other = c;
  other.seed = 99;
  EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(R"({"model":"dephn","learning_rat":0.1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"data":{"sampels":10}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"model":"xgboost"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"model":"dephn","tasks":1})"), ConfigError);
  EXPECT_THROW(config_from_json("{not json"), ConfigError);
  EXPECT_EQ(config_from_json(R"({"model":"mmoe","tasks":1})").tasks, 1u);
}

TEST(ConfigTest, MissingFileNamesThePath) {
  try {
    load_config("/nonexistent/missing.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.cfg"), std::string::npos);
  }
}

TEST(TrainerTest, ForcedUnitCoefficientMatchesUnmodulatedUpdate) {
  TrainConfig off = fixtures::small_config(ModelKind::Dephn);
  TrainConfig one = off;
  off.modulation = Modulation::Disabled;
  one.modulation = Modulation::ForceOne;
  const auto schema = fixtures::small_schema();
  Trainer a(off, schema), b(one, schema);
  for (int step = 0; step < 3; ++step) {
    const auto batch = fixtures::random_batch(schema, 24, 10 + step);
    const auto labels = fixtures::random_labels(2, 24, 20 + step);
    const auto ra = a.train_step(batch, labels);
    const auto rb = b.train_step(batch, labels);
    EXPECT_EQ(ra.total_loss, rb.total_loss);
  }
  double worst = 0.0;
  for (const auto& p : a.store().all()) worst = std::max(worst, max_abs_diff(p.value, b.store().value(p.name)));
  EXPECT_LT(worst, 1e-12);
}

TEST(TrainerTest, ModulationLeavesForwardValuesUnchanged) {
  TrainConfig on = fixtures::small_config(ModelKind::Dephn);
  TrainConfig off = on;
  off.modulation = Modulation::Disabled;
  const auto schema = fixtures::small_schema();
  Trainer a(on, schema), b(off, schema);
  const auto batch = fixtures::random_batch(schema, 32, 5);
  const auto labels = fixtures::random_labels(2, 32, 6);
  StepResult ra, rb;
  const auto ga = a.gradients(batch, labels, &ra);
  const auto gb = b.gradients(batch, labels, &rb);
  EXPECT_EQ(ra.task_losses, rb.task_losses);
  // Only the gate parameter sees the coefficient.
  for (const auto& [name, g] : ga) {
    if (name != "gate.tvg.raw") EXPECT_EQ(g, gb.at(name)) << name;
  }
}

TEST(TrainerTest, SingleTaskCoefficientIsNeutral) {
  model::DephnConfig c;
  c.pipeline = features::FeaturePipelineConfig{fixtures::small_schema(), 2, features::SsgGranularity::PerCoordinate, true};
  c.tasks = 1;
  c.bank.shape.output_dim = 4;
  c.bank.shape.dnn_hidden = {4};
  model::Dephn m(c);
  ad::ParameterStore store;
  Rng rng(3);
  m.register_parameters(store, rng);
  ad::Tape tape(store);
  const auto out = m.forward(tape, fixtures::random_batch(fixtures::small_schema(), 8, 4));
  TrainConfig config;
  EXPECT_EQ(step_gamma(config, out, *m.gate_table(), fixtures::random_labels(1, 8, 5)), Tensor({1, 3, 3}, 1.0));
}

TEST(TrainerTest, LossDecreasesOverOneHundredSteps) {
  TrainConfig c = fixtures::small_config(ModelKind::Dephn);
  c.data.variant = data::Variant::Related;
  c.data.samples = 3200;
  const auto split = prepare_data(c);
  Trainer trainer(c, split.train.schema);
  std::vector<double> losses;
  for (std::size_t step = 0; step < 100; ++step) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < c.batch_size; ++r) rows.push_back((step * c.batch_size + r) % split.train.rows);
    losses.push_back(trainer.train_step(split.train.batch(rows), batch_labels(split.train, rows, 2)).total_loss);
  }
  const auto mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 10; ++i) s += losses[i];
    return s / 10.0;
  };
  EXPECT_LT(mean(90), mean(0));
}

TEST(TrainerTest, NonFiniteLossAborts) {
  TrainConfig c = fixtures::small_config(ModelKind::Mmoe);
  const auto schema = fixtures::small_schema();
  Trainer t(c, schema);
  t.store().value("tower.t0.mmoe.bias").fill(std::nan(""));
  EXPECT_THROW(t.train_step(fixtures::random_batch(schema, 8, 1), fixtures::random_labels(2, 8, 2)), NonFiniteLossError);
}

TEST(EvaluateTest, SingleClassFoldOmitsAuc) {
  data::LabeledDataset ds;
  ds.schema = fixtures::small_schema();
  ds.rows = 4;
  ds.labels = {{1, 1, 1, 1}, {0, 1, 0, 1}};
  Predictions p;
  p.probabilities = {{0.9, 0.8, 0.7, 0.6}, {0.2, 0.7, 0.4, 0.6}};
  const auto m = evaluate_predictions(p, ds);
  EXPECT_FALSE(m[0].auc.has_value());
  EXPECT_NE(m[0].auc_error.find("task 0"), std::string::npos);
  EXPECT_GT(m[0].logloss, 0.0);
  ASSERT_TRUE(m[1].auc.has_value());
  EXPECT_EQ(*m[1].auc, 1.0);
}

TEST(ExperimentTest, ArtifactRowCounts) {
  const TrainConfig c = tiny_run(ModelKind::Dephn);
  const auto dir = scratch_dir("rows");
  const auto run = run_experiment(c, dir);
  const auto schema = resolve_schema(c);
  EXPECT_EQ(line_count(dir / "ssg.csv"), 1 + 3 * schema.field_count() * schema.embed_dim);
  EXPECT_EQ(line_count(dir / "loss_curve.csv"), 1 + c.epochs * c.tasks);
  EXPECT_EQ(line_count(dir / "gates.csv"), 1 + c.tasks * c.arch.public_experts.size() * c.mappings.size());
  EXPECT_EQ(line_count(dir / "metrics.csv"), 1 + c.tasks);
  EXPECT_EQ(line_count(dir / "confidence_scatter.csv"), 1 + 40u);
  EXPECT_EQ(run.train_loss.size(), c.epochs);
  const std::string metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("config_hash,seed,", 0), 0u);
  EXPECT_NE(metrics.find(config_hash(c) + "," + std::to_string(c.seed)), std::string::npos);
  for (const char* f : {"gates.csv", "ssg.csv", "activation_ratio.csv", "loss_curve.csv", "confidence_scatter.csv"}) {
    EXPECT_NE(slurp(dir / f).find("\n" + config_hash(c) + ","), std::string::npos) << f;
  }
  std::filesystem::remove_all(dir);
}

TEST(ExperimentTest, RepeatedRunsAreByteIdentical) {
  const TrainConfig c = tiny_run(ModelKind::Dephn);
  const auto a = scratch_dir("repro_a"), b = scratch_dir("repro_b");
  run_experiment(c, a);
  run_experiment(c, b);
  for (const char* f : {"metrics.csv", "gates.csv", "ssg.csv", "activation_ratio.csv", "loss_curve.csv",
                        "confidence_scatter.csv", "config.json", "model.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(ExperimentTest, SavedModelReproducesPredictions) {
  const TrainConfig c = tiny_run(ModelKind::Mtphn);
  const auto split = prepare_data(c);
  std::unique_ptr<Trainer> trainer;
  train_and_evaluate(c, split, &trainer);
  const auto dir = scratch_dir("model");
  std::filesystem::create_directories(dir);
  save_model(dir / "model.json", *trainer);
  const auto loaded = load_model(dir / "model.json");
  EXPECT_EQ(loaded->predict(split.validation).probabilities, trainer->predict(split.validation).probabilities);
  std::filesystem::remove_all(dir);
}

TEST(ExperimentTest, SweepCoversSixteenCombinations) {
  TrainConfig c = tiny_run(ModelKind::Dephn);
  c.epochs = 1;
  c.max_steps_per_epoch = 2;
  const auto dir = scratch_dir("sweep");
  const auto rows = run_sweep(c, dir);
  EXPECT_EQ(rows.size(), 16u);
  EXPECT_EQ(line_count(dir / "sweep.csv"), 17u);
  EXPECT_TRUE(std::filesystem::exists(dir / "pearson-add-sqrt" / "metrics.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "cosine-mul-cos" / "metrics.csv"));
  std::filesystem::remove_all(dir);
}

TEST(ExperimentTest, DnnBaselineLossDropsOverFiveEpochs) {
  TrainConfig c;
  c.model = ModelKind::Dnn;
  c.data.variant = data::Variant::Related;
  c.data.samples = 10000;
  c.epochs = 5;
  const auto split = prepare_data(c);
  const auto run = train_and_evaluate(c, split);
  ASSERT_EQ(run.train_loss.size(), 5u);
  EXPECT_LE(run.train_loss[4][0], 0.8 * run.train_loss[0][0])
      << run.train_loss[0][0] << " -> " << run.train_loss[4][0];
}

TEST(ReportTest, SummaryNamesMissingRuns) {
  EXPECT_THROW(summarize_runs({"/nonexistent/run"}), std::runtime_error);
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
