#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dephn/gradcheck.hpp"
#include "dephn/model.hpp"
#include "test_support.hpp"

using namespace dephn;
using namespace dephn::model;
using dephn::ad::Tape;
using dephn::ad::Var;

namespace {

experts::ExpertShape small_shape() {
  experts::ExpertShape s;
  s.output_dim = 6;
  s.depth = 2;
  s.dnn_hidden = {8};
  return s;
}

DephnConfig small_dephn(GatingMode gating = GatingMode::TrainableValue) {
  DephnConfig c;
  c.pipeline = features::FeaturePipelineConfig{fixtures::small_schema(), 2, features::SsgGranularity::PerCoordinate, true};
  c.tasks = 2;
  c.bank.shape = small_shape();
  c.gating = gating;
  return c;
}

Tensor labels_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }

}  // namespace

TEST(MappingTest, RawSinCos) {
  ad::ParameterStore store;
  Tape tape(store);
  Var x = tape.constant(Tensor::vector({0.0, std::numbers::pi / 2}));
  auto out = apply_mappings(x, default_mappings());
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].id, x.id);
  EXPECT_NEAR(out[1].value()[0], 0.0, 1e-15);
  EXPECT_NEAR(out[1].value()[1], 1.0, 1e-15);
  EXPECT_NEAR(out[2].value()[0], 1.0, 1e-15);
  EXPECT_NEAR(out[2].value()[1], 0.0, 1e-15);
  EXPECT_EQ(parse_mapping("cos"), Mapping::Cos);
  EXPECT_THROW(parse_mapping("tan"), std::invalid_argument);
}

TEST(GateTableTest, TrainableGatesStartAtOneHalf) {
  GateTable table(GatingMode::TrainableValue, 2, 3, 3, 10);
  ad::ParameterStore store;
  Rng rng(1);
  table.register_parameters(store, rng);
  Tape tape(store);
  EXPECT_EQ(table.tvg_values(tape).value(), Tensor({2, 3, 3}, 0.5));
  EXPECT_EQ(table.task_values(tape, tape.constant(Tensor({4, 10})), 1).shape(), (Shape{9, 1}));
}

TEST(GateTableTest, MappingGatesAreSoftmaxOverEntries) {
  GateTable table(GatingMode::Mapping, 2, 3, 2, 5);
  ad::ParameterStore store;
  Rng rng(2);
  table.register_parameters(store, rng);
  Rng data(3);
  Tensor z({4, 5});
  for (auto& v : z.values()) v = data.uniform(-1.0, 1.0);

  Tape tape(store);
  const Tensor g = table.task_values(tape, tape.constant(z), 0).value();
  ASSERT_EQ(g.shape(), (Shape{4, 6}));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t e = 0; e < 6; ++e) {
      EXPECT_GT(g.at(r, e), 0.0);
      s += g.at(r, e);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }

  store.value("gate.mg.t1.weight").fill(0.0);
  Tape flat(store);
  EXPECT_LE(max_abs_diff(table.task_values(flat, flat.constant(z), 1).value(), Tensor({4, 6}, 1.0 / 6.0)), 1e-15);
  EXPECT_THROW(table.tvg_values(flat), std::logic_error);
}

TEST(AssemblyTest, PublicLogitIsAffineInGates) {
  Dephn model(small_dephn());
  ad::ParameterStore store;
  Rng rng(4);
  model.register_parameters(store, rng);
  store.value("tower.t0.pub.bias").fill(0.3);
  const std::size_t entries = 9, d_e = 6, rows = 3;
  Rng data(5);
  Tensor mapped({rows, entries, d_e});
  for (auto& v : mapped.values()) v = data.uniform(-1.0, 1.0);
  Tensor g1({entries, 1}), g2({entries, 1});
  for (auto& v : g1.values()) v = data.uniform();
  for (auto& v : g2.values()) v = data.uniform();
  Tensor mix({entries, 1});
  for (std::size_t i = 0; i < entries; ++i) mix[i] = 2.0 * g1[i] - 0.5 * g2[i];

  Tape tape(store);
  Var m = tape.constant(mapped);
  auto logit = [&](const Tensor& g) { return model.assemble_public_logit(tape, m, tape.constant(g), 0).value(); };
  const Tensor l1 = logit(g1), l2 = logit(g2), lm = logit(mix), l0 = logit(Tensor({entries, 1}, 0.0));
  for (std::size_t r = 0; r < rows; ++r) {
    EXPECT_NEAR(l0[r], 0.3, 1e-15);
    EXPECT_NEAR(lm[r] - 0.3, 2.0 * (l1[r] - 0.3) - 0.5 * (l2[r] - 0.3), 1e-12);
  }
  EXPECT_THROW(model.assemble_public_logit(tape, tape.constant(Tensor({rows, 4, d_e})), tape.constant(g1), 0),
               ShapeError);
}

TEST(AssemblyTest, NoPrivateExpertsLeavesTheBias) {
  DephnConfig c = small_dephn();
  c.bank.private_kinds.clear();
  Dephn model(c);
  ad::ParameterStore store;
  Rng rng(6);
  model.register_parameters(store, rng);
  store.value("tower.t1.pri.bias").fill(-0.7);
  Tape tape(store);
  const auto out = model.forward(tape, fixtures::random_batch(fixtures::small_schema(), 4, 7));
  EXPECT_EQ(out.logit_pri[1].value(), Tensor({4, 1}, -0.7));
}

TEST(CombineTest, ZeroLogits) {
  ad::ParameterStore store;
  Tape tape(store);
  Var zero = tape.constant(Tensor({2, 1}, 0.0));
  EXPECT_EQ(combine_predictions(zero, zero, CombineMode::LogitSum).value(), Tensor({2, 1}, 0.5));
  EXPECT_EQ(combine_predictions(zero, zero, CombineMode::Literal).value(), Tensor({2, 1}, 1.0));
}

TEST(ActivationRatioTest, DegenerateAndSinglePath) {
  ad::ParameterStore store;
  Tape tape(store);
  ForwardResult r;
  r.logit_pub = {tape.constant(Tensor({3, 1}, 0.0)), tape.constant(Tensor::matrix(3, 1, {1, -3, 2}))};
  r.logit_pri = {tape.constant(Tensor({3, 1}, 0.0)), tape.constant(Tensor::matrix(3, 1, {-2, 2, 2}))};
  const auto ratio = public_private_activation_ratio(r);
  EXPECT_EQ(ratio[0], 0.5);
  EXPECT_DOUBLE_EQ(ratio[1], 0.5);
  r.logit_pri.clear();
  EXPECT_EQ(public_private_activation_ratio(r)[1], 1.0);
}

TEST(GateSnapshotTest, MappingGatesAveragedOverBatch) {
  Dephn model(small_dephn(GatingMode::Mapping));
  ad::ParameterStore store;
  Rng rng(8);
  model.register_parameters(store, rng);
  Tape tape(store);
  const auto out = model.forward(tape, fixtures::random_batch(fixtures::small_schema(), 5, 9));
  const Tensor snap = gate_snapshot(out, *model.gate_table());
  ASSERT_EQ(snap.shape(), (Shape{2, 3, 3}));
  for (std::size_t t = 0; t < 2; ++t) {
    const Tensor& g = out.gates[t].value();
    double total = 0.0;
    for (std::size_t e = 0; e < 9; ++e) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 5; ++r) mean += g.at(r, e) / 5.0;
      EXPECT_NEAR(snap[t * 9 + e], mean, 1e-15);
      total += snap[t * 9 + e];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(out.modulation_points.size(), 2u);
}

TEST(DephnTest, ShapesAndNames) {
  Dephn model(small_dephn());
  ad::ParameterStore store;
  Rng rng(10);
  model.register_parameters(store, rng);
  for (const char* name : {"embedding.table", "ssg.cross.raw", "gate.tvg.raw", "expert.pub2.dnn.layer0.weight",
                           "expert.t1.pri0.cross.layer1.weight", "expert.t0.pri1.field.layer0.mix",
                           "expert.pub0.residual.scale", "tower.t0.pub.weight", "tower.t1.pri.bias"}) {
    EXPECT_TRUE(store.contains(name)) << name;
  }
  Tape tape(store);
  const auto out = model.forward(tape, fixtures::random_batch(fixtures::small_schema(), 7, 11));
  ASSERT_EQ(out.predictions.size(), 2u);
  EXPECT_EQ(out.predictions[0].shape(), (Shape{7}));
  EXPECT_EQ(out.modulation_points.size(), 1u);
  EXPECT_EQ(out.modulation_points[0].shape(), (Shape{2, 3, 3}));
  for (double p : out.predictions[1].value().values()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(DephnTest, PrivateExpertsOnlyLearnFromTheirTask) {
  Dephn model(small_dephn());
  ad::ParameterStore store;
  Rng rng(12);
  model.register_parameters(store, rng);
  for (const auto& name : store.names_with_prefix("expert.")) {
    if (name.ends_with(".residual.scale")) store.value(name).fill(0.2);
  }
  const auto batch = fixtures::random_batch(fixtures::small_schema(), 8, 13);
  const auto labels = fixtures::random_labels(2, 8, 14);

  Tape tape(store);
  const auto out = model.forward(tape, batch);
  const auto grads = tape.backward(ad::binary_logloss(out.predictions[1], labels_tensor(labels[1])));
  auto norm = [&](const std::string& prefix) {
    double s = 0.0;
    for (const auto& [name, g] : grads)
      if (name.starts_with(prefix))
        for (double v : g.values()) s += std::abs(v);
    return s;
  };
  EXPECT_EQ(norm("expert.t0."), 0.0);
  EXPECT_EQ(norm("tower.t0."), 0.0);
  EXPECT_GT(norm("expert.t1."), 0.0);
  for (int k = 0; k < 3; ++k) EXPECT_GT(norm("expert.pub" + std::to_string(k) + "."), 0.0);
}

TEST(DephnTest, FiniteDifferenceAudit) {
  for (GatingMode gating : {GatingMode::TrainableValue, GatingMode::Mapping}) {
    DephnConfig c = small_dephn(gating);
    c.bank.shape.output_dim = 3;
    c.bank.shape.depth = 1;
    c.bank.shape.dnn_hidden = {4};
    Dephn model(c);
    ad::ParameterStore store;
    Rng rng(15);
    model.register_parameters(store, rng);
    for (const auto& name : store.names_with_prefix("")) {
      if (name.ends_with(".scale") || name.ends_with(".bias") || name == "gate.tvg.raw")
        store.value(name) = ad::uniform_init(store.value(name).shape(), 0.3, rng);
    }
    const auto batch = fixtures::random_batch(fixtures::small_schema(), 4, 16);
    const auto labels = fixtures::random_labels(2, 4, 17);
    const auto report = ad::finite_difference_check(store, [&](Tape& t) {
      const auto out = model.forward(t, batch);
      return ad::binary_logloss(out.predictions[0], labels_tensor(labels[0])) +
             ad::binary_logloss(out.predictions[1], labels_tensor(labels[1]));
    }, 1e-6);
    EXPECT_LT(report.max_relative_error, 1e-3) << report.worst_parameter << "[" << report.worst_index << "]";
  }
}

TEST(MmoeTest, SingleExpertPassesThrough) {
  MmoeConfig c{fixtures::small_schema(), 2, 1, small_shape(), {}};
  MmoeLite model(c);
  ad::ParameterStore store;
  Rng rng(18);
  model.register_parameters(store, rng);
  const auto batch = fixtures::random_batch(fixtures::small_schema(), 5, 19);
  Tape tape(store);
  const auto out = model.forward(tape, batch);
  EXPECT_EQ(out.gates[0].value(), Tensor({5, 1}, 1.0));

  experts::ExpertShape shape = small_shape();
  shape.fields = 4;
  shape.embed_dim = 4;
  experts::Expert expert("expert.pub0", experts::ExpertKind::Dnn, shape);
  features::BranchInputs in;
  in.raw = features::embed_batch(tape, fixtures::small_schema(), batch);
  in.dnn_flat = features::flatten_fields(in.raw);
  Var direct = ad::matmul(expert.forward(tape, in), tape.parameter("tower.t0.mmoe.weight")) +
               tape.parameter("tower.t0.mmoe.bias");
  EXPECT_LE(max_abs_diff(out.logit_pub[0].value(), direct.value()), 1e-14);
}

TEST(MmoeTest, MatchesReducedDephnWithCopiedParameters) {
  const auto schema = fixtures::small_schema();
  const std::size_t experts = 3, d_e = 6, tasks = 2;

  DephnConfig dc;
  dc.pipeline = features::FeaturePipelineConfig{schema, 2, features::SsgGranularity::PerCoordinate, false};
  dc.tasks = tasks;
  dc.bank.public_kinds.assign(experts, experts::ExpertKind::Dnn);
  dc.bank.private_kinds.clear();
  dc.bank.shape = small_shape();
  dc = mtphn_config(dc);
  Dephn dephn(dc);
  MmoeLite mmoe(MmoeConfig{schema, tasks, experts, small_shape(), {}});

  ad::ParameterStore ms, ds;
  Rng r1(20), r2(21);
  mmoe.register_parameters(ms, r1);
  dephn.register_parameters(ds, r2);
  for (const auto& name : ms.names_with_prefix("")) {
    if (ds.contains(name)) ds.value(name) = ms.value(name);
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    ds.value(GateTable::mg_prefix(t) + ".weight") = ms.value(MmoeLite::gate_prefix(t) + ".weight");
    ds.value(GateTable::mg_prefix(t) + ".bias") = ms.value(MmoeLite::gate_prefix(t) + ".bias");
    const Tensor& w = ms.value(MmoeLite::tower_prefix(t) + ".weight");
    Tensor tiled({experts * d_e, 1});
    for (std::size_t k = 0; k < experts; ++k)
      for (std::size_t i = 0; i < d_e; ++i) tiled[k * d_e + i] = w[i];
    ds.value(Dephn::tower_prefix(t, "pub") + ".weight") = tiled;
    ds.value(Dephn::tower_prefix(t, "pub") + ".bias") = ms.value(MmoeLite::tower_prefix(t) + ".bias");
    ds.value(Dephn::tower_prefix(t, "pri") + ".bias").fill(0.0);
  }

  const auto batch = fixtures::random_batch(schema, 16, 22);
  Tape ta(ms), tb(ds);
  const auto a = mmoe.forward(ta, batch);
  const auto b = dephn.forward(tb, batch);
  for (std::size_t t = 0; t < tasks; ++t) {
    EXPECT_LE(max_abs_diff(a.predictions[t].value(), b.predictions[t].value()), 1e-12);
  }
}

TEST(DnnBaselineTest, TasksAreIndependent) {
  DnnBaseline model(DnnBaselineConfig{fixtures::small_schema(), 2, {8, 4}});
  ad::ParameterStore store;
  Rng rng(23);
  model.register_parameters(store, rng);
  EXPECT_TRUE(store.contains("dnn.t1.embedding.table"));
  EXPECT_TRUE(store.contains("dnn.t0.mlp.layer2.weight"));
  const auto batch = fixtures::random_batch(fixtures::small_schema(), 6, 24);
  Tape tape(store);
  const auto out = model.forward(tape, batch);
  const auto grads = tape.backward(ad::binary_logloss(out.predictions[0], Tensor({6}, 1.0)));
  for (const auto& [name, g] : grads) {
    if (name.starts_with("dnn.t1.")) {
      for (double v : g.values()) EXPECT_EQ(v, 0.0) << name;
    }
  }
  EXPECT_TRUE(out.logit_pri.empty());
}
