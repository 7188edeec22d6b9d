#include <benchmark/benchmark.h>

#include "dephn/dataset.hpp"
#include "dephn/experiment.hpp"
#include "dephn/metrics.hpp"
#include "dephn/trainer.hpp"
#include "dephn/virtual_gradient.hpp"

using namespace dephn;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

struct TrainingFixture {
  harness::TrainConfig config;
  data::DatasetSplit split;
  std::vector<std::size_t> rows;
  features::FieldBatch batch;
  std::vector<std::vector<double>> labels;

  explicit TrainingFixture(harness::ModelKind kind) {
    config.model = kind;
    config.data.samples = 4000;
    split = harness::prepare_data(config);
    for (std::size_t i = 0; i < config.batch_size; ++i) rows.push_back(i);
    batch = split.train.batch(rows);
    labels = harness::batch_labels(split.train, rows, config.tasks);
  }
};

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(256, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    ad::Tape tape;
    benchmark::DoNotOptimize(ad::matmul(tape.constant(a), tape.constant(b)).value().data());
  }
  state.SetItemsProcessed(state.iterations() * 256 * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_ForwardBackward(benchmark::State& state) {
  TrainingFixture f(static_cast<harness::ModelKind>(state.range(0)));
  harness::Trainer trainer(f.config, f.split.train.schema);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.gradients(f.batch, f.labels).size());
  state.SetLabel(std::string(harness::model_kind_name(f.config.model)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.config.batch_size));
}
BENCHMARK(BM_ForwardBackward)
    ->Arg(static_cast<int>(harness::ModelKind::Dnn))
    ->Arg(static_cast<int>(harness::ModelKind::Mmoe))
    ->Arg(static_cast<int>(harness::ModelKind::Mtphn))
    ->Arg(static_cast<int>(harness::ModelKind::Dephn))
    ->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  TrainingFixture f(harness::ModelKind::Dephn);
  harness::Trainer trainer(f.config, f.split.train.schema);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(f.batch, f.labels).total_loss);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.config.batch_size));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_GammaTable(benchmark::State& state) {
  Rng rng(3);
  vg::GammaContext ctx;
  ctx.labels.assign(static_cast<std::size_t>(state.range(0)), std::vector<double>(256));
  for (auto& y : ctx.labels)
    for (auto& v : y) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  ctx.gates = Tensor({ctx.labels.size(), 3, 3});
  for (auto& v : ctx.gates.values()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(vg::gamma_table(ctx).data());
}
BENCHMARK(BM_GammaTable)->Arg(2)->Arg(4);

static void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> s(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = i < 2 ? static_cast<double>(i) : (rng.uniform() < 0.3 ? 1.0 : 0.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(s, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auc)->Arg(5000)->Arg(50000);

static void BM_GenerateDataset(benchmark::State& state) {
  data::DatasetSpec spec;
  spec.sample_count = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(data::generate_dataset(spec).rows);
}
BENCHMARK(BM_GenerateDataset)->Arg(50000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
