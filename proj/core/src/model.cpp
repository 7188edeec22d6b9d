#include "dephn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dephn::model {

using ad::Var;

std::string_view mapping_name(Mapping m) {
  switch (m) {
    case Mapping::Raw: return "raw";
    case Mapping::Sin: return "sin";
    case Mapping::Cos: return "cos";
  }
  return "?";
}

Mapping parse_mapping(std::string_view name) {
  if (name == "raw" || name == "rm") return Mapping::Raw;
  if (name == "sin") return Mapping::Sin;
  if (name == "cos") return Mapping::Cos;
  throw std::invalid_argument("unknown mapping: " + std::string(name));
}

Var apply_mapping(Var expert_out, Mapping m) {
  switch (m) {
    case Mapping::Raw: return expert_out;
    case Mapping::Sin: return ad::sin(expert_out);
    case Mapping::Cos: return ad::cos(expert_out);
  }
  throw std::logic_error("unreachable mapping");
}

std::vector<Var> apply_mappings(Var expert_out, const MappingSet& set) {
  std::vector<Var> out;
  out.reserve(set.size());
  for (Mapping m : set) out.push_back(apply_mapping(expert_out, m));
  return out;
}

std::string_view gating_mode_name(GatingMode m) { return m == GatingMode::TrainableValue ? "tvg" : "mg"; }

GatingMode parse_gating_mode(std::string_view name) {
  if (name == "tvg") return GatingMode::TrainableValue;
  if (name == "mg") return GatingMode::Mapping;
  throw std::invalid_argument("unknown gating mode: " + std::string(name));
}

std::string_view combine_mode_name(CombineMode m) { return m == CombineMode::LogitSum ? "logit-sum" : "literal"; }

CombineMode parse_combine_mode(std::string_view name) {
  if (name == "logit-sum") return CombineMode::LogitSum;
  if (name == "literal") return CombineMode::Literal;
  throw std::invalid_argument("unknown combine mode: " + std::string(name));
}

// --- gate table ----------------------------------------------------------------

GateTable::GateTable(GatingMode mode, std::size_t tasks, std::size_t experts, std::size_t mappings,
                     std::size_t input_dim)
    : mode_(mode), tasks_(tasks), experts_(experts), mappings_(mappings), input_dim_(input_dim) {}

void GateTable::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  if (mode_ == GatingMode::TrainableValue) {
    store.add(kTvgName, Tensor({tasks_, experts_, mappings_}, 0.0));
    return;
  }
  for (std::size_t t = 0; t < tasks_; ++t) {
    store.add(mg_prefix(t) + ".weight", ad::kaiming_uniform({input_dim_, entries_per_task()}, input_dim_, rng));
    store.add(mg_prefix(t) + ".bias", Tensor({entries_per_task()}, 0.0));
  }
}

Var GateTable::tvg_values(ad::Tape& tape) const {
  if (mode_ != GatingMode::TrainableValue) throw std::logic_error("tvg_values on a mapping-gated table");
  return ad::sigmoid(tape.parameter(kTvgName));
}

Var GateTable::task_values(ad::Tape& tape, Var z_pub, std::size_t task) const {
  if (task >= tasks_) throw std::out_of_range("gate table: task " + std::to_string(task) + " out of range");
  if (mode_ == GatingMode::TrainableValue) {
    Var flat = ad::reshape(tvg_values(tape), {1, tasks_ * entries_per_task()});
    return ad::reshape(ad::slice_last(flat, task * entries_per_task(), entries_per_task()), {entries_per_task(), 1});
  }
  Var logits = ad::matmul(z_pub, tape.parameter(mg_prefix(task) + ".weight")) + tape.parameter(mg_prefix(task) + ".bias");
  return ad::softmax_last(logits);
}

// --- DEPHN ---------------------------------------------------------------------

namespace {

experts::ExpertBankConfig bank_with_shape(experts::ExpertBankConfig bank, const features::FieldSchema& schema) {
  bank.shape.fields = schema.field_count();
  bank.shape.embed_dim = schema.embed_dim;
  return bank;
}

void register_tower(ad::ParameterStore& store, Rng& rng, const std::string& prefix, std::size_t input_dim,
                    const std::vector<std::size_t>& hidden) {
  if (hidden.empty()) {
    store.add(prefix + ".weight", ad::kaiming_uniform({input_dim, 1}, input_dim, rng));
    store.add(prefix + ".bias", Tensor({1}, 0.0));
    return;
  }
  std::vector<std::size_t> widths = hidden;
  widths.push_back(1);
  experts::DnnStack(prefix, input_dim, widths).register_parameters(store, rng);
}

Var tower_logit(ad::Tape& tape, const std::string& prefix, Var x, const std::vector<std::size_t>& hidden) {
  if (hidden.empty()) return ad::matmul(x, tape.parameter(prefix + ".weight")) + tape.parameter(prefix + ".bias");
  std::vector<std::size_t> widths = hidden;
  widths.push_back(1);
  return experts::DnnStack(prefix, x.shape().back(), widths).forward(tape, x);
}

}  // namespace

Dephn::Dephn(DephnConfig config, std::string kind)
    : config_(std::move(config)),
      kind_(std::move(kind)),
      pipeline_(config_.pipeline),
      bank_(config_.tasks, bank_with_shape(config_.bank, config_.pipeline.schema)),
      gates_(config_.gating, config_.tasks, config_.bank.public_kinds.size(), config_.mappings.size(),
             config_.pipeline.schema.flat_dim()) {
  if (config_.tasks == 0) throw std::invalid_argument("model needs at least one task");
  if (config_.mappings.empty()) throw std::invalid_argument("mapping set must not be empty");
}

void Dephn::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  pipeline_.register_parameters(store, rng);
  bank_.register_parameters(store, rng);
  gates_.register_parameters(store, rng);
  const std::size_t d_e = bank_.output_dim();
  const std::size_t pub_in = bank_.public_count() * config_.mappings.size() * d_e;
  const std::size_t pri_in = bank_.private_count() * d_e;
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    if (bank_.public_count() > 0) {
      register_tower(store, rng, tower_prefix(t, "pub"), pub_in, config_.tower_hidden);
    } else {
      store.add(tower_prefix(t, "pub") + ".bias", Tensor({1}, 0.0));
    }
    if (pri_in > 0) {
      register_tower(store, rng, tower_prefix(t, "pri"), pri_in, config_.tower_hidden);
    } else {
      store.add(tower_prefix(t, "pri") + ".bias", Tensor({1}, 0.0));
    }
  }
}

Var Dephn::assemble_public_logit(ad::Tape& tape, Var mapped, Var gate, std::size_t task) const {
  const Shape& s = mapped.shape();
  const std::size_t entries = gates_.entries_per_task();
  if (s.size() != 3 || s[1] != entries) {
    throw ShapeError("public assembly expects [B x " + std::to_string(entries) + " x d_e], got " + shape_to_string(s));
  }
  // TVG gates arrive as [K*P x 1], MG gates as [B x K*P].
  Var g = gates_.mode() == GatingMode::Mapping ? ad::reshape(gate, {s[0], entries, 1}) : gate;
  Var gated = ad::reshape(mapped * g, {s[0], entries * s[2]});
  return tower_logit(tape, tower_prefix(task, "pub"), gated, config_.tower_hidden);
}

Var Dephn::assemble_private_logit(ad::Tape& tape, const std::vector<Var>& private_outputs, std::size_t batch,
                                  std::size_t task) const {
  if (private_outputs.empty()) {
    return tape.constant(Tensor({batch, 1}, 0.0)) + tape.parameter(tower_prefix(task, "pri") + ".bias");
  }
  Var joined = private_outputs.size() == 1 ? private_outputs[0] : ad::concat_last(private_outputs);
  return tower_logit(tape, tower_prefix(task, "pri"), joined, config_.tower_hidden);
}

ForwardResult Dephn::forward(ad::Tape& tape, const features::FieldBatch& batch) const {
  const features::BranchInputs in = pipeline_.forward(tape, batch);
  const std::size_t rows = batch.rows;
  const std::size_t d_e = bank_.output_dim();
  const std::size_t entries = gates_.entries_per_task();

  ForwardResult out;

  Var mapped;
  const bool has_public = bank_.public_count() > 0;
  if (has_public) {
    std::vector<Var> parts;
    parts.reserve(entries);
    for (Var e : bank_.forward_public(tape, in)) {
      for (Var m : apply_mappings(e, config_.mappings)) parts.push_back(m);
    }
    mapped = ad::reshape(parts.size() == 1 ? parts[0] : ad::concat_last(parts), {rows, entries, d_e});
  }

  Var tvg_all;
  if (has_public && gates_.mode() == GatingMode::TrainableValue) {
    tvg_all = ad::gradient_scale(gates_.tvg_values(tape), Tensor({config_.tasks, bank_.public_count(), config_.mappings.size()}, 1.0));
    out.modulation_points.push_back(tvg_all);
  }

  for (std::size_t t = 0; t < config_.tasks; ++t) {
    Var pub;
    if (has_public) {
      Var gate;
      if (gates_.mode() == GatingMode::TrainableValue) {
        Var flat = ad::reshape(tvg_all, {1, config_.tasks * entries});
        gate = ad::reshape(ad::slice_last(flat, t * entries, entries), {entries, 1});
      } else {
        gate = ad::gradient_scale(gates_.task_values(tape, in.dnn_flat, t), Tensor({entries}, 1.0));
        out.modulation_points.push_back(gate);
      }
      out.gates.push_back(gate);
      pub = assemble_public_logit(tape, mapped, gate, t);
    } else {
      pub = tape.constant(Tensor({rows, 1}, 0.0)) + tape.parameter(tower_prefix(t, "pub") + ".bias");
    }
    Var pri = assemble_private_logit(tape, bank_.forward_private(tape, in, t), rows, t);
    out.logit_pub.push_back(pub);
    out.logit_pri.push_back(pri);
    out.predictions.push_back(ad::reshape(combine_predictions(pub, pri, config_.combine), {rows}));
  }
  return out;
}

DephnConfig mtphn_config(DephnConfig base) {
  base.mappings = {Mapping::Raw};
  base.gating = GatingMode::Mapping;
  return base;
}

// --- MMoE-lite -----------------------------------------------------------------

MmoeLite::MmoeLite(MmoeConfig config) : config_(std::move(config)) {
  config_.schema.validate();
  config_.shape.fields = config_.schema.field_count();
  config_.shape.embed_dim = config_.schema.embed_dim;
  if (config_.experts == 0) throw std::invalid_argument("mmoe needs at least one expert");
  for (std::size_t k = 0; k < config_.experts; ++k) {
    experts_.push_back(
        std::make_unique<experts::Expert>("expert.pub" + std::to_string(k), experts::ExpertKind::Dnn, config_.shape));
  }
}

void MmoeLite::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  features::register_embeddings(store, config_.schema, rng);
  for (const auto& e : experts_) e->register_parameters(store, rng);
  const std::size_t in = config_.schema.flat_dim();
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    store.add(gate_prefix(t) + ".weight", ad::kaiming_uniform({in, config_.experts}, in, rng));
    store.add(gate_prefix(t) + ".bias", Tensor({config_.experts}, 0.0));
  }
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    register_tower(store, rng, tower_prefix(t), config_.shape.output_dim, config_.tower_hidden);
  }
}

ForwardResult MmoeLite::forward(ad::Tape& tape, const features::FieldBatch& batch) const {
  const std::size_t rows = batch.rows;
  const std::size_t d_e = config_.shape.output_dim;
  const std::size_t k = config_.experts;

  features::BranchInputs in;
  in.raw = features::embed_batch(tape, config_.schema, batch);
  in.attended = in.raw;
  in.dnn_flat = features::flatten_fields(in.raw);
  in.cross_flat = in.dnn_flat;
  in.field_grid = in.raw;

  std::vector<Var> outs;
  for (const auto& e : experts_) outs.push_back(e->forward(tape, in));
  Var stacked = ad::reshape(outs.size() == 1 ? outs[0] : ad::concat_last(outs), {rows, k, d_e});

  ForwardResult result;
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    Var gate = ad::softmax_last(ad::matmul(in.dnn_flat, tape.parameter(gate_prefix(t) + ".weight")) +
                                tape.parameter(gate_prefix(t) + ".bias"));
    Var mix = ad::reshape(ad::matmul(ad::reshape(gate, {rows, 1, k}), stacked), {rows, d_e});
    Var logit = tower_logit(tape, tower_prefix(t), mix, config_.tower_hidden);
    result.gates.push_back(gate);
    result.logit_pub.push_back(logit);
    result.predictions.push_back(ad::reshape(ad::sigmoid(logit), {rows}));
  }
  return result;
}

// --- DNN baseline --------------------------------------------------------------

DnnBaseline::DnnBaseline(DnnBaselineConfig config) : config_(std::move(config)) { config_.schema.validate(); }

namespace {

std::string dnn_prefix(std::size_t t) { return "dnn.t" + std::to_string(t); }

std::vector<std::size_t> with_output(std::vector<std::size_t> hidden) {
  hidden.push_back(1);
  return hidden;
}

}  // namespace

void DnnBaseline::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    features::register_embeddings(store, config_.schema, rng, dnn_prefix(t) + ".embedding");
    experts::DnnStack(dnn_prefix(t) + ".mlp", config_.schema.flat_dim(), with_output(config_.hidden))
        .register_parameters(store, rng);
  }
}

ForwardResult DnnBaseline::forward(ad::Tape& tape, const features::FieldBatch& batch) const {
  ForwardResult result;
  for (std::size_t t = 0; t < config_.tasks; ++t) {
    Var z = features::flatten_fields(features::embed_batch(tape, config_.schema, batch, dnn_prefix(t) + ".embedding"));
    Var logit =
        experts::DnnStack(dnn_prefix(t) + ".mlp", config_.schema.flat_dim(), with_output(config_.hidden)).forward(tape, z);
    result.logit_pub.push_back(logit);
    result.predictions.push_back(ad::reshape(ad::sigmoid(logit), {batch.rows}));
  }
  return result;
}

// --- combination and diagnostics ----------------------------------------------

Var combine_predictions(Var logit_pub, Var logit_pri, CombineMode mode) {
  if (mode == CombineMode::LogitSum) return ad::sigmoid(logit_pub + logit_pri);
  return ad::sigmoid(logit_pub) + ad::sigmoid(logit_pri);
}

std::vector<double> public_private_activation_ratio(const ForwardResult& result) {
  std::vector<double> ratios;
  for (std::size_t t = 0; t < result.logit_pub.size(); ++t) {
    auto mean_abs = [](const Tensor& v) {
      double s = 0.0;
      for (double x : v.values()) s += std::abs(x);
      return v.size() ? s / static_cast<double>(v.size()) : 0.0;
    };
    const double pub = mean_abs(result.logit_pub[t].value());
    const double pri = t < result.logit_pri.size() ? mean_abs(result.logit_pri[t].value()) : 0.0;
    ratios.push_back(pub + pri == 0.0 ? 0.5 : pub / (pub + pri));
  }
  return ratios;
}

Tensor gate_snapshot(const ForwardResult& result, const GateTable& table) {
  const std::size_t entries = table.entries_per_task();
  Tensor snap({table.tasks(), table.experts(), table.mappings()}, 0.0);
  for (std::size_t t = 0; t < table.tasks() && t < result.gates.size(); ++t) {
    const Tensor& g = result.gates[t].value();
    const std::size_t rows = g.size() / entries;
    for (std::size_t e = 0; e < entries; ++e) {
      double acc = 0.0;
      if (table.mode() == GatingMode::TrainableValue) {
        acc = g[e];
      } else {
        for (std::size_t r = 0; r < rows; ++r) acc += g[r * entries + e];
        acc /= static_cast<double>(rows);
      }
      snap[t * entries + e] = acc;
    }
  }
  return snap;
}

}  // namespace dephn::model
