#include <gtest/gtest.h>

#include "dephn/experts.hpp"
#include "dephn/gradcheck.hpp"
#include "test_support.hpp"

using namespace dephn;
using namespace dephn::experts;
using dephn::ad::Tape;
using dephn::ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void zero_all(ad::ParameterStore& store, const std::string& prefix) {
  for (const auto& name : store.names_with_prefix(prefix)) store.value(name).fill(0.0);
}

}  // namespace

TEST(CrossStackTest, DcnSingleLayerArithmetic) {
  CrossStack stack("c", 2, 2, 1, CrossMode::Dcn);
  ad::ParameterStore store;
  Rng rng(1);
  stack.register_parameters(store, rng);
  store.value("c.layer0.weight") = Tensor({2, 1}, std::vector<double>{1, 0});
  Tape tape(store);
  EXPECT_EQ(stack.interact(tape, tape.constant(Tensor({1, 2}, std::vector<double>{1, 2}))).value(),
            Tensor({1, 2}, std::vector<double>{2, 4}));
}

TEST(CrossStackTest, DcnV2IdentityWeight) {
  CrossStack stack("c", 2, 2, 1, CrossMode::DcnV2);
  ad::ParameterStore store;
  Rng rng(1);
  stack.register_parameters(store, rng);
  store.value("c.layer0.weight") = Tensor({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tape tape(store);
  EXPECT_EQ(stack.interact(tape, tape.constant(Tensor({1, 2}, 1.0))).value(), Tensor({1, 2}, 2.0));
}

TEST(CrossStackTest, ZeroInteractionWeightsReduceToProjection) {
  for (auto mode : {CrossMode::Dcn, CrossMode::DcnV2}) {
    CrossStack stack("c", 6, 3, 2, mode);
    ad::ParameterStore store;
    Rng rng(2);
    stack.register_parameters(store, rng);
    for (std::size_t l = 0; l < 2; ++l) store.value("c.layer" + std::to_string(l) + ".weight").fill(0.0);
    Tape tape(store);
    const Tensor x0 = random_tensor({4, 6}, 3);
    Var x = tape.constant(x0);
    EXPECT_EQ(stack.interact(tape, x).value(), x0);
    EXPECT_EQ(stack.forward(tape, x).value(), ad::matmul(x, tape.parameter("c.projection")).value());
  }
}

TEST(CrossStackTest, RejectsWrongWidth) {
  CrossStack stack("c", 6, 3, 2, CrossMode::DcnV2);
  ad::ParameterStore store;
  Rng rng(2);
  stack.register_parameters(store, rng);
  Tape tape(store);
  EXPECT_THROW(stack.forward(tape, tape.constant(Tensor({2, 5}))), ShapeError);
}

TEST(FieldStackTest, ZeroMixingReducesToProjection) {
  FieldStack stack("f", 3, 2, 4, 2);
  ad::ParameterStore store;
  Rng rng(4);
  stack.register_parameters(store, rng);
  zero_all(store, "f.layer");
  Tape tape(store);
  const Tensor h0 = random_tensor({2, 3, 2}, 5);
  EXPECT_EQ(stack.interact(tape, tape.constant(h0)).value(), h0);
}

TEST(FieldStackTest, SingleFieldArithmetic) {
  FieldStack stack("f", 1, 3, 2, 1);
  ad::ParameterStore store;
  Rng rng(4);
  stack.register_parameters(store, rng);
  store.value("f.layer0.mix") = Tensor({1, 1}, 1.0);
  Tape tape(store);
  const Tensor h = Tensor({1, 1, 3}, std::vector<double>{0.5, -2.0, 3.0});
  EXPECT_EQ(stack.interact(tape, tape.constant(h)).value(),
            Tensor({1, 1, 3}, std::vector<double>{0.75, 2.0, 12.0}));
}

TEST(FieldStackTest, TwoLayersMatchLoopOracle) {
  const std::size_t c = 3, d = 2, batch = 2;
  FieldStack stack("f", c, d, 4, 2);
  ad::ParameterStore store;
  Rng rng(6);
  stack.register_parameters(store, rng);
  const Tensor h0 = random_tensor({batch, c, d}, 7);

  Tensor h = h0;
  for (std::size_t l = 0; l < 2; ++l) {
    const Tensor& m = store.value("f.layer" + std::to_string(l) + ".mix");
    Tensor next(h.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t k = 0; k < d; ++k) {
          double mixed = 0.0;
          for (std::size_t j = 0; j < c; ++j) mixed += m.at(i, j) * h.at(b, j, k);
          next.at(b, i, k) = h0.at(b, i, k) * mixed + h.at(b, i, k);
        }
    h = next;
  }
  Tape tape(store);
  EXPECT_LE(max_abs_diff(stack.interact(tape, tape.constant(h0)).value(), h), 1e-14);
}

TEST(DnnStackTest, ZeroParametersGiveZeroOutput) {
  DnnStack stack("d", 5, {4, 3});
  ad::ParameterStore store;
  Rng rng(8);
  stack.register_parameters(store, rng);
  zero_all(store, "d.");
  Tape tape(store);
  EXPECT_EQ(stack.forward(tape, tape.constant(random_tensor({2, 5}, 9))).value(), Tensor({2, 3}, 0.0));
}

TEST(DnnStackTest, SingleLayerIsAffine) {
  DnnStack stack("d", 3, {2});
  ad::ParameterStore store;
  Rng rng(10);
  stack.register_parameters(store, rng);
  store.value("d.layer0.bias") = Tensor::vector({0.5, -1.0});
  const Tensor x = random_tensor({4, 3}, 11);
  const Tensor& w = store.value("d.layer0.weight");
  Tape tape(store);
  const Tensor y = stack.forward(tape, tape.constant(x)).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = store.value("d.layer0.bias")[o];
      for (std::size_t i = 0; i < 3; ++i) acc += x.at(r, i) * w.at(i, o);
      EXPECT_NEAR(y.at(r, o), acc, 1e-15);
    }
}

TEST(DnnStackTest, TwoLayerGradientCheck) {
  DnnStack stack("d", 4, {5, 3});
  ad::ParameterStore store;
  Rng rng(12);
  stack.register_parameters(store, rng);
  for (const auto& name : store.names_with_prefix("d.")) {
    if (name.ends_with("bias")) store.value(name) = ad::uniform_init(store.value(name).shape(), 0.5, rng);
  }
  const Tensor x = random_tensor({6, 4}, 13);
  const auto r = ad::finite_difference_check(store, [&](Tape& t) {
    return ad::sum(ad::sin(stack.forward(t, t.constant(x))));
  }, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(ResidualTest, ZeroScaleLeavesOutputUnchanged) {
  TrainableResidual res("r", 6, 3);
  ad::ParameterStore store;
  Rng rng(14);
  res.register_parameters(store, rng);
  EXPECT_EQ(store.value("r.scale").item(), 0.0);
  Tape tape(store);
  const Tensor out = random_tensor({2, 3}, 15);
  EXPECT_EQ(res.apply(tape, tape.constant(random_tensor({2, 6}, 16)), tape.constant(out)).value(), out);
}

TEST(ResidualTest, UnitScaleWithIdentityProjectionAdds) {
  TrainableResidual res("r", 3, 3);
  ad::ParameterStore store;
  Rng rng(17);
  res.register_parameters(store, rng);
  EXPECT_FALSE(store.contains("r.projection"));
  store.value("r.scale").fill(1.0);
  Tape tape(store);
  EXPECT_EQ(res.apply(tape, tape.constant(Tensor::matrix(1, 3, {1, 2, 3})), tape.constant(Tensor::matrix(1, 3, {4, 5, 6})))
                .value(),
            Tensor::matrix(1, 3, {5, 7, 9}));
}

TEST(ResidualTest, ScaleGradientIsInnerProductWithProjection) {
  TrainableResidual res("r", 5, 3);
  ad::ParameterStore store;
  Rng rng(18);
  res.register_parameters(store, rng);
  store.value("r.scale").fill(0.4);
  const Tensor in = random_tensor({4, 5}, 19);
  const Tensor out = random_tensor({4, 3}, 20);
  const Tensor adjoint = random_tensor({4, 3}, 21);
  auto loss = [&](Tape& t) { return ad::sum(res.apply(t, t.constant(in), t.constant(out)) * t.constant(adjoint)); };

  Tape tape(store);
  const double analytic = tape.backward(loss(tape)).at("r.scale").item();
  Tape t2(store);
  const Tensor proj = res.project(t2, t2.constant(in)).value();
  double inner = 0.0;
  for (std::size_t i = 0; i < proj.size(); ++i) inner += proj[i] * adjoint[i];
  EXPECT_NEAR(analytic, inner, 1e-12);
  EXPECT_LT(ad::finite_difference_check(store, loss, 1e-6, {"r.scale"}).max_relative_error, 1e-6);
}

TEST(ExpertBankTest, EveryExpertEmitsCommonWidth) {
  const auto schema = fixtures::small_schema();
  ExpertShape shape{schema.field_count(), schema.embed_dim, 8, 2, {16, 8}, CrossMode::DcnV2};
  ExpertBank bank(2, ExpertBankConfig{{ExpertKind::Dnn, ExpertKind::Cross, ExpertKind::Field},
                                      {ExpertKind::Cross, ExpertKind::Field},
                                      shape});
  features::FeaturePipeline pipe(features::FeaturePipelineConfig{schema, 2, features::SsgGranularity::PerCoordinate, true});
  ad::ParameterStore store;
  Rng rng(22);
  pipe.register_parameters(store, rng);
  bank.register_parameters(store, rng);
  Tape tape(store);
  const auto in = pipe.forward(tape, fixtures::random_batch(schema, 5, 23));
  for (Var v : bank.forward_public(tape, in)) EXPECT_EQ(v.shape(), (Shape{5, 8}));
  for (std::size_t t = 0; t < 2; ++t)
    for (Var v : bank.forward_private(tape, in, t)) EXPECT_EQ(v.shape(), (Shape{5, 8}));
  EXPECT_EQ(bank.private_expert(1, 0).name(), "expert.t1.pri0");
  EXPECT_EQ(parse_expert_kind("field"), ExpertKind::Field);
  EXPECT_THROW(parse_expert_kind("cin"), std::invalid_argument);
}
