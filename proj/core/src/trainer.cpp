#include "dephn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "dephn/virtual_gradient.hpp"

namespace dephn::harness {

std::unique_ptr<model::MultiTaskModel> build_model(const TrainConfig& config, const features::FieldSchema& schema) {
  config.validate();
  experts::ExpertShape shape;
  shape.fields = schema.field_count();
  shape.embed_dim = schema.embed_dim;
  shape.output_dim = config.arch.expert_dim;
  shape.depth = config.arch.depth;
  shape.dnn_hidden = config.arch.dnn_hidden;
  shape.cross_mode = config.arch.cross_mode;

  switch (config.model) {
    case ModelKind::Dnn:
      return std::make_unique<model::DnnBaseline>(model::DnnBaselineConfig{schema, config.tasks, config.arch.baseline_hidden});
    case ModelKind::Mmoe:
      return std::make_unique<model::MmoeLite>(
          model::MmoeConfig{schema, config.tasks, config.arch.public_experts.size(), shape, config.arch.tower_hidden});
    case ModelKind::Mtphn:
    case ModelKind::Dephn: {
      model::DephnConfig dc;
      dc.pipeline = features::FeaturePipelineConfig{schema, config.arch.heads, config.arch.ssg, config.arch.self_attention};
      dc.tasks = config.tasks;
      dc.bank = experts::ExpertBankConfig{config.arch.public_experts, config.arch.private_experts, shape};
      dc.mappings = config.mappings;
      dc.gating = config.gating;
      dc.combine = config.combine;
      dc.tower_hidden = config.arch.tower_hidden;
      if (config.model == ModelKind::Mtphn) return std::make_unique<model::Dephn>(model::mtphn_config(dc), "mtphn");
      return std::make_unique<model::Dephn>(dc);
    }
  }
  throw ConfigError("unknown model kind");
}

Trainer::Trainer(const TrainConfig& config, const features::FieldSchema& schema)
    : config_(config), schema_(schema), model_(build_model(config, schema)), adam_(config.adam) {
  Rng rng(config_.seed, 11);
  model_->register_parameters(store_, rng);
}

Tensor step_gamma(const TrainConfig& config, const model::ForwardResult& forward, const model::GateTable& table,
                  const std::vector<std::vector<double>>& labels) {
  const Shape shape{table.tasks(), table.experts(), table.mappings()};
  if (config.modulation != Modulation::Enabled || labels.empty() || labels.front().size() < 2) return Tensor(shape, 1.0);
  vg::GammaContext ctx;
  ctx.labels = labels;
  ctx.gates = model::gate_snapshot(forward, table);
  ctx.measure = config.measure;
  ctx.function = config.function;
  return vg::gamma_table(ctx);
}

namespace {

struct StepGraph {
  ad::Var total;
  StepResult result;
};

StepGraph build_step(ad::Tape& tape, const TrainConfig& config, const model::MultiTaskModel& m,
                     const features::FieldBatch& batch, const std::vector<std::vector<double>>& labels) {
  if (labels.size() != m.task_count()) {
    throw std::invalid_argument("train_step: expected labels for " + std::to_string(m.task_count()) + " tasks, got " +
                                std::to_string(labels.size()));
  }
  const model::ForwardResult fwd = m.forward(tape, batch);
  StepGraph g;
  bool finite = true;
  for (std::size_t t = 0; t < m.task_count(); ++t) {
    ad::Var loss = ad::binary_logloss(fwd.predictions[t], Tensor({batch.rows}, labels[t]));
    g.total = t == 0 ? loss : g.total + loss;
    g.result.task_losses.push_back(loss.item());
    finite = finite && std::isfinite(loss.item());
  }
  g.result.total_loss = g.total.item();
  if (!finite || !std::isfinite(g.result.total_loss)) {
    std::string msg = "non-finite training loss (";
    for (std::size_t t = 0; t < g.result.task_losses.size(); ++t) {
      msg += (t ? ", task " : "task ") + std::to_string(t) + " = " + std::to_string(g.result.task_losses[t]);
    }
    throw NonFiniteLossError(msg + ")");
  }

  const model::GateTable* table = m.gate_table();
  if (table != nullptr && !fwd.modulation_points.empty() && config.modulation != Modulation::Disabled) {
    g.result.gamma = step_gamma(config, fwd, *table, labels);
    if (table->mode() == model::GatingMode::TrainableValue) {
      tape.set_gradient_scale(fwd.modulation_points.front(), g.result.gamma);
    } else {
      const std::size_t entries = table->entries_per_task();
      for (std::size_t t = 0; t < fwd.modulation_points.size(); ++t) {
        std::vector<double> row(g.result.gamma.data() + t * entries, g.result.gamma.data() + (t + 1) * entries);
        tape.set_gradient_scale(fwd.modulation_points[t], Tensor({entries}, std::move(row)));
      }
    }
  }
  return g;
}

}  // namespace

ad::Gradients Trainer::gradients(const features::FieldBatch& batch, const std::vector<std::vector<double>>& labels,
                                 StepResult* result) const {
  ad::Tape tape(store_);
  StepGraph g = build_step(tape, config_, *model_, batch, labels);
  ad::Gradients grads = tape.backward(g.total);
  if (result != nullptr) *result = std::move(g.result);
  return grads;
}

StepResult Trainer::train_step(const features::FieldBatch& batch, const std::vector<std::vector<double>>& labels) {
  StepResult result;
  const ad::Gradients grads = gradients(batch, labels, &result);
  adam_.step(store_, grads);
  return result;
}

Predictions Trainer::predict(const data::LabeledDataset& ds, std::size_t chunk) const {
  const std::size_t tasks = model_->task_count();
  Predictions out;
  out.probabilities.assign(tasks, {});
  out.logit_pub.assign(tasks, {});
  out.logit_pri.assign(tasks, {});
  const model::GateTable* table = model_->gate_table();
  if (table != nullptr) out.gate_mean = Tensor({table->tasks(), table->experts(), table->mappings()}, 0.0);

  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < ds.rows; start += chunk) {
    const std::size_t n = std::min(chunk, ds.rows - start);
    ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = start + i;
    ad::Tape tape(store_);
    const model::ForwardResult fwd = model_->forward(tape, ds.batch(ids));
    out.has_private = !fwd.logit_pri.empty();
    for (std::size_t t = 0; t < tasks; ++t) {
      const auto p = fwd.predictions[t].value().values();
      out.probabilities[t].insert(out.probabilities[t].end(), p.begin(), p.end());
      const auto lp = fwd.logit_pub[t].value().values();
      out.logit_pub[t].insert(out.logit_pub[t].end(), lp.begin(), lp.end());
      if (out.has_private) {
        const auto lq = fwd.logit_pri[t].value().values();
        out.logit_pri[t].insert(out.logit_pri[t].end(), lq.begin(), lq.end());
      } else {
        out.logit_pri[t].insert(out.logit_pri[t].end(), n, 0.0);
      }
    }
    if (table != nullptr && !fwd.gates.empty()) {
      const Tensor snap = model::gate_snapshot(fwd, *table);
      for (std::size_t i = 0; i < snap.size(); ++i) out.gate_mean[i] += snap[i] * static_cast<double>(n);
    }
  }
  if (table != nullptr && ds.rows > 0) {
    for (std::size_t i = 0; i < out.gate_mean.size(); ++i) out.gate_mean[i] /= static_cast<double>(ds.rows);
  }
  return out;
}

}  // namespace dephn::harness
