#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "dephn/gradcheck.hpp"
#include "dephn/ops.hpp"

using namespace dephn;
using namespace dephn::ad;

namespace {

using UnaryLoss = std::function<Var(Tape&, Var)>;

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Central differences of a scalar function of one input tensor, evaluated on fresh tapes.
Tensor numeric_gradient(const UnaryLoss& f, const Tensor& x, double eps = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor up = x, down = x;
    up[i] += eps;
    down[i] -= eps;
    Tape t1, t2;
    g[i] = (f(t1, t1.constant(up)).item() - f(t2, t2.constant(down)).item()) / (2 * eps);
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(std::abs(analytic[i]), 1e-8));
  }
  return worst;
}

Tensor analytic_gradient(const UnaryLoss& f, const Tensor& x) {
  Tape tape;
  Var v = tape.variable(x, "x");
  return tape.backward(f(tape, v)).at("x");
}

}  // namespace

TEST(Backward, IdentityOfScalarParameterHasUnitGradient) {
  ParameterStore store;
  store.add("p", Tensor::scalar(1.7));
  Tape tape(store);
  Gradients g = tape.backward(tape.parameter("p"));
  EXPECT_DOUBLE_EQ(g.at("p").item(), 1.0);
}

TEST(Backward, SigmoidAtZeroHasQuarterGradient) {
  ParameterStore store;
  store.add("p", Tensor::scalar(0.0));
  Tape tape(store);
  Var loss = sigmoid(tape.parameter("p"));
  EXPECT_DOUBLE_EQ(loss.item(), 0.5);
  EXPECT_DOUBLE_EQ(tape.backward(loss).at("p").item(), 0.25);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  ParameterStore store;
  Rng rng(3);
  const std::vector<std::size_t> widths{5, 7, 4, 1};
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    store.add("w" + std::to_string(l), kaiming_uniform({widths[l], widths[l + 1]}, widths[l], rng));
    store.add("b" + std::to_string(l), uniform_init({widths[l + 1]}, 0.1, rng));
  }
  const Tensor input = random_tensor({6, 5}, 9);
  auto loss = [&](Tape& tape) {
    Var h = tape.constant(input);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      h = matmul(h, tape.parameter("w" + std::to_string(l))) + tape.parameter("b" + std::to_string(l));
      if (l + 2 < widths.size()) h = tanh(h);
    }
    return sum(h);
  };
  const GradCheckReport r = finite_difference_check(store, loss, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
  EXPECT_EQ(r.coordinates_checked, store.element_count());
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1.0, 2.0}), "x");
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, UnreachedParameterGetsZeroGradient) {
  ParameterStore store;
  store.add("used", Tensor::scalar(2.0));
  store.add("unused", Tensor::vector({1.0, 2.0, 3.0}));
  Tape tape(store);
  Gradients g = tape.backward(tape.parameter("used") * tape.parameter("used"));
  EXPECT_DOUBLE_EQ(g.at("used").item(), 4.0);
  EXPECT_EQ(g.at("unused"), Tensor({3}, 0.0));
}

TEST(Backward, IsLinearInTheLoss) {
  ParameterStore store;
  Rng rng(5);
  store.add("w", uniform_init({3, 2}, 1.0, rng));
  const Tensor x = random_tensor({4, 3}, 6);
  auto l1 = [&](Tape& t) { return sum(sin(matmul(t.constant(x), t.parameter("w")))); };
  auto l2 = [&](Tape& t) { return mean(exp(matmul(t.constant(x), t.parameter("w")))); };
  const double a = 1.5, b = -0.25;

  Tape t1(store), t2(store), t3(store);
  const Tensor g1 = t1.backward(l1(t1)).at("w");
  const Tensor g2 = t2.backward(l2(t2)).at("w");
  const Tensor g = t3.backward(scale(l1(t3), a) + scale(l2(t3), b)).at("w");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-12);
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    ParameterStore store;
    Rng rng(11);
    store.add("w", kaiming_uniform({4, 3}, 4, rng));
    Tape tape(store);
    Var y = softmax_last(matmul(tape.constant(random_tensor({2, 4}, 12)), tape.parameter("w")));
    Var loss = sum(y * y);
    return std::pair{loss.item(), tape.backward(loss).at("w")};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(StopGradient, DetachedParameterHasZeroGradient) {
  ParameterStore store;
  store.add("p", Tensor::scalar(4.0));
  Tape tape(store);
  EXPECT_DOUBLE_EQ(tape.backward(stop_gradient(tape.parameter("p"))).at("p").item(), 0.0);
}

TEST(StopGradient, ProductWithFrozenSelf) {
  ParameterStore store;
  store.add("p", Tensor::scalar(3.0));
  Tape tape(store);
  Var p = tape.parameter("p");
  Var loss = p * stop_gradient(p);
  EXPECT_DOUBLE_EQ(loss.item(), 9.0);
  EXPECT_DOUBLE_EQ(tape.backward(loss).at("p").item(), 3.0);
}

TEST(StopGradient, FrozenCoefficientTimesGate) {
  ParameterStore store;
  store.add("G", Tensor::scalar(0.3));
  Tape tape(store);
  Var loss = stop_gradient(tape.constant(Tensor::scalar(2.0))) * tape.parameter("G");
  EXPECT_DOUBLE_EQ(loss.item(), 0.6);
  EXPECT_DOUBLE_EQ(tape.backward(loss).at("G").item(), 2.0);
}

TEST(StopGradient, ForwardIsBitEqual) {
  Tape tape;
  const Tensor x = random_tensor({3, 5}, 1);
  EXPECT_EQ(stop_gradient(tape.constant(x)).value(), x);
}

TEST(StopGradient, OracleWithFrozenFactorHeldFixed) {
  const double p0 = 1.37, eps = 1e-5;
  ParameterStore store;
  store.add("p", Tensor::scalar(p0));
  Tape tape(store);
  Var p = tape.parameter("p");
  const double analytic = tape.backward(p * stop_gradient(p)).at("p").item();
  const double numeric = (p0 * (p0 + eps) - p0 * (p0 - eps)) / (2 * eps);
  EXPECT_NEAR(analytic, numeric, 1e-6);
}

TEST(Primitives, HadamardSinSoftmaxExamples) {
  Tape tape;
  EXPECT_EQ(mul(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4}))).value(),
            Tensor::vector({3, 8}));

  Var x = tape.variable(Tensor::scalar(0.0), "x");
  Var s = sin(x);
  EXPECT_DOUBLE_EQ(s.item(), 0.0);
  EXPECT_DOUBLE_EQ(tape.backward(s).at("x").item(), 1.0);

  Tape t2;
  EXPECT_EQ(softmax_last(t2.constant(Tensor::vector({0, 0}))).value(), Tensor::vector({0.5, 0.5}));
}

TEST(Primitives, EveryPrimitiveMatchesFiniteDifferences) {
  const Tensor a = random_tensor({3, 4}, 21);
  const Tensor b = random_tensor({3, 4}, 22);
  const Tensor positive = random_tensor({3, 4}, 23, 0.2, 2.0);
  const Tensor m = random_tensor({4, 2}, 24);
  const Tensor row = random_tensor({4}, 25);
  const Tensor batched = random_tensor({2, 3, 4}, 26);

  const std::vector<std::pair<const char*, UnaryLoss>> cases{
      {"add", [&](Tape& t, Var x) { return sum(sin(x + t.constant(b))); }},
      {"add-broadcast", [&](Tape& t, Var x) { return sum(sin(x + t.constant(row))); }},
      {"sub", [&](Tape& t, Var x) { return sum(sin(t.constant(b) - x)); }},
      {"mul", [&](Tape& t, Var x) { return sum(x * t.constant(b) * x); }},
      {"matmul", [&](Tape& t, Var x) { return sum(sin(matmul(x, t.constant(m)))); }},
      {"matmul-right", [&](Tape& t, Var x) { return sum(sin(matmul(t.constant(b), reshape(x, {4, 3})))); }},
      {"matmul-batched", [&](Tape& t, Var x) {
         Var y = reshape(x, {1, 3, 4});
         return sum(sin(matmul(t.constant(batched), transpose_last2(y + t.constant(batched)))));
       }},
      {"concat-slice", [&](Tape& t, Var x) {
         std::vector<Var> parts{x, t.constant(b), x};
         return sum(sin(slice_last(concat_last(parts), 2, 7)));
       }},
      {"sigmoid", [](Tape&, Var x) { return sum(sigmoid(x)); }},
      {"relu", [](Tape&, Var x) { return sum(relu(x) * x); }},
      {"tanh", [](Tape&, Var x) { return sum(tanh(x)); }},
      {"cos", [](Tape&, Var x) { return sum(cos(x)); }},
      {"exp", [](Tape&, Var x) { return mean(exp(x)); }},
      {"abs", [](Tape&, Var x) { return sum(abs(x) * x); }},
      {"power", [](Tape&, Var x) { return sum(power(x, 3.0)); }},
      {"sum-last", [](Tape&, Var x) { Var s = sum_last(x); return sum(s * s); }},
      {"softmax", [&](Tape& t, Var x) { return sum(softmax_last(x) * t.constant(b)); }},
      {"scale-shift", [](Tape&, Var x) { return sum(sin(add_scalar(scale(x, -1.5), 0.3))); }},
      {"logloss", [](Tape& t, Var x) {
         return binary_logloss(sigmoid(x), Tensor({3, 4}, std::vector<double>{0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0}));
         (void)t;
       }},
  };
  for (const auto& [name, f] : cases) {
    EXPECT_LT(max_relative_error(analytic_gradient(f, a), numeric_gradient(f, a)), 1e-4) << name;
  }
  const UnaryLoss log_loss = [](Tape&, Var x) { return sum(log(x)); };
  EXPECT_LT(max_relative_error(analytic_gradient(log_loss, positive), numeric_gradient(log_loss, positive)), 1e-4);
  const UnaryLoss sqrt_loss = [](Tape&, Var x) { return sum(power(x, 0.5)); };
  EXPECT_LT(max_relative_error(analytic_gradient(sqrt_loss, positive), numeric_gradient(sqrt_loss, positive)), 1e-4);
}

TEST(Primitives, GatherRowsScattersGradients) {
  const std::vector<std::size_t> rows{2, 0, 2};
  const UnaryLoss f = [&](Tape&, Var table) { return sum(sin(gather_rows(table, rows))); };
  const Tensor table = random_tensor({3, 2}, 31);
  EXPECT_LT(max_relative_error(analytic_gradient(f, table), numeric_gradient(f, table)), 1e-4);
  const Tensor g = analytic_gradient(f, table);
  EXPECT_EQ(g.at(1, 0), 0.0);
  EXPECT_EQ(g.at(1, 1), 0.0);
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2 x 3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ShapeError);
}

TEST(Primitives, DomainRules) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor::vector({1.0, 0.0}))), std::domain_error);
  EXPECT_THROW(gather_rows(tape.constant(Tensor({2, 2})), std::vector<std::size_t>{2}), std::out_of_range);

  Tape t2;
  Var x = t2.variable(Tensor::vector({0.0, -1.0}), "x");
  EXPECT_EQ(t2.backward(sum(abs(x))).at("x"), Tensor::vector({0.0, -1.0}));

  Tape t3;
  Var z = t3.variable(Tensor::scalar(0.0), "z");
  EXPECT_DOUBLE_EQ(t3.backward(power(z, 0.5)).at("z").item(), 1e6);
  Tape t4;
  Var w = t4.variable(Tensor::scalar(0.0), "w");
  EXPECT_DOUBLE_EQ(t4.backward(power(w, 0.5, PowOptions{50.0})).at("w").item(), 50.0);
}

TEST(GradientScale, ForwardIdentityBackwardScaled) {
  Tape tape;
  const Tensor x = random_tensor({2, 3}, 41);
  Var v = tape.variable(x, "x");
  Var s = gradient_scale(v, Tensor({3}, std::vector<double>{0.0, 1.0, 2.5}));
  EXPECT_EQ(s.value(), x);
  const Tensor g = tape.backward(sum(s)).at("x");
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(g.at(r, 0), 0.0);
    EXPECT_EQ(g.at(r, 1), 1.0);
    EXPECT_EQ(g.at(r, 2), 2.5);
  }
}

TEST(GradientScale, ScaleCanBeReplacedAfterForward) {
  Tape tape;
  Var v = tape.variable(Tensor::vector({1.0, 2.0}), "x");
  Var s = gradient_scale(v, Tensor({2}, 1.0));
  tape.set_gradient_scale(s, Tensor::vector({3.0, 0.5}));
  EXPECT_EQ(tape.backward(sum(s)).at("x"), Tensor::vector({3.0, 0.5}));
  EXPECT_THROW(tape.set_gradient_scale(v, Tensor({2}, 1.0)), std::invalid_argument);
  EXPECT_THROW(tape.set_gradient_scale(s, Tensor({3}, 1.0)), ShapeError);
  EXPECT_THROW(tape.set_gradient_scale(s, Tensor({2}, std::nan(""))), std::invalid_argument);
}

TEST(FiniteDifference, QuadraticIsExact) {
  ParameterStore store;
  store.add("p", Tensor::scalar(0.7));
  const auto r = finite_difference_check(store, [](Tape& t) {
    Var p = t.parameter("p");
    return p * p + scale(p, 3.0);
  }, 1e-4);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_DOUBLE_EQ(store.value("p").item(), 0.7);
}

TEST(FiniteDifference, ReportsNonFiniteLoss) {
  ParameterStore store;
  store.add("p", Tensor::scalar(800.0));
  EXPECT_THROW(finite_difference_check(store, [](Tape& t) { return exp(t.parameter("p")); }, 1e-4), NonFiniteError);
}

TEST(Parameters, NamesAreUnique) {
  ParameterStore store;
  store.add("a", Tensor::scalar(1.0));
  EXPECT_THROW(store.add("a", Tensor::scalar(2.0)), std::invalid_argument);
  EXPECT_THROW(store.get("missing"), std::out_of_range);
}
