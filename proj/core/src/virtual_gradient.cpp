#include "dephn/virtual_gradient.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dephn::vg {

std::string_view function_name(CoefficientFunction f) {
  switch (f) {
    case CoefficientFunction::MulCos: return "mul-cos";
    case CoefficientFunction::MulAbs: return "mul-abs";
    case CoefficientFunction::MulSquare: return "mul-square";
    case CoefficientFunction::MulSqrt: return "mul-sqrt";
    case CoefficientFunction::AddCos: return "add-cos";
    case CoefficientFunction::AddAbs: return "add-abs";
    case CoefficientFunction::AddSquare: return "add-square";
    case CoefficientFunction::AddSqrt: return "add-sqrt";
  }
  return "?";
}

CoefficientFunction parse_function(std::string_view name) {
  for (auto f : kAllFunctions) {
    if (function_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown coefficient function: " + std::string(name));
}

std::string_view measure_name(SimilarityMeasure m) {
  return m == SimilarityMeasure::AbsCosine ? "cosine" : "pearson";
}

SimilarityMeasure parse_measure(std::string_view name) {
  if (name == "cosine") return SimilarityMeasure::AbsCosine;
  if (name == "pearson") return SimilarityMeasure::AbsPearson;
  throw std::invalid_argument("unknown similarity measure: " + std::string(name));
}

double batch_label_similarity(std::span<const double> a, std::span<const double> b, SimilarityMeasure measure) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("label vectors differ in length: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  if (a.size() < 2) throw std::invalid_argument("label similarity needs at least two samples");
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  if (measure == SimilarityMeasure::AbsPearson) {
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    dot += da * db;
    na += da * da;
    nb += db * db;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::min(1.0, std::abs(dot) / std::sqrt(na * nb));
}

double gate_difference(double gate_t, double gate_j) { return std::min(1.0, std::abs(gate_t - gate_j)); }

double gamma(double x, double y, CoefficientFunction f) {
  if (!(x >= 0.0 && x <= 1.0) || !(y >= 0.0 && y <= 1.0)) {
    throw std::invalid_argument("gamma: arguments must lie in [0, 1], got (" + std::to_string(x) + ", " +
                                std::to_string(y) + ")");
  }
  constexpr double pi = std::numbers::pi;
  const double prod = 2.0 * x * y - 1.0;
  const double sum = x + y - 1.0;
  switch (f) {
    case CoefficientFunction::MulCos: return std::cos(2.0 * pi * x * y) + 1.0;
    case CoefficientFunction::MulAbs: return 2.0 * std::abs(prod);
    case CoefficientFunction::MulSquare: return 2.0 * prod * prod;
    case CoefficientFunction::MulSqrt: return 2.0 * std::sqrt(std::abs(prod));
    case CoefficientFunction::AddCos: return std::cos(pi * x + pi * y) + 1.0;
    case CoefficientFunction::AddAbs: return 2.0 * std::abs(sum);
    case CoefficientFunction::AddSquare: return 2.0 * sum * sum;
    case CoefficientFunction::AddSqrt: return 2.0 * std::sqrt(std::abs(sum));
  }
  throw std::logic_error("unreachable coefficient function");
}

namespace {

void check_context(const GammaContext& ctx) {
  const std::size_t t = ctx.tasks();
  if (ctx.gates.rank() != 3 || ctx.gates.dim(0) != t) {
    throw ShapeError("gate snapshot " + shape_to_string(ctx.gates.shape()) + " does not match " +
                     std::to_string(t) + " tasks");
  }
}

}  // namespace

double aggregate_gamma(const GammaContext& ctx, std::size_t task, std::size_t expert, std::size_t mapping) {
  check_context(ctx);
  const std::size_t tasks = ctx.tasks();
  if (tasks <= 1) return 1.0;
  const std::size_t k_count = ctx.gates.dim(1);
  const std::size_t p_count = ctx.gates.dim(2);
  auto gate = [&](std::size_t t) { return ctx.gates[(t * k_count + expert) * p_count + mapping]; };
  double product = 1.0;
  for (std::size_t j = 0; j < tasks; ++j) {
    if (j == task) continue;
    const double x = batch_label_similarity(ctx.labels[j], ctx.labels[task], ctx.measure);
    const double y = gate_difference(gate(task), gate(j));
    product *= gamma(x, y, ctx.function);
  }
  return product;
}

Tensor gamma_table(const GammaContext& ctx) {
  check_context(ctx);
  const std::size_t tasks = ctx.tasks();
  Tensor out(ctx.gates.shape(), 1.0);
  if (tasks <= 1) return out;
  const std::size_t k_count = ctx.gates.dim(1);
  const std::size_t p_count = ctx.gates.dim(2);

  std::vector<double> sim(tasks * tasks, 0.0);
  for (std::size_t a = 0; a < tasks; ++a) {
    for (std::size_t b = a + 1; b < tasks; ++b) {
      sim[a * tasks + b] = sim[b * tasks + a] = batch_label_similarity(ctx.labels[a], ctx.labels[b], ctx.measure);
    }
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t k = 0; k < k_count; ++k) {
      for (std::size_t p = 0; p < p_count; ++p) {
        const double gt = ctx.gates[(t * k_count + k) * p_count + p];
        double product = 1.0;
        for (std::size_t j = 0; j < tasks; ++j) {
          if (j == t) continue;
          const double gj = ctx.gates[(j * k_count + k) * p_count + p];
          product *= gamma(sim[j * tasks + t], gate_difference(gt, gj), ctx.function);
        }
        out[(t * k_count + k) * p_count + p] = product;
      }
    }
  }
  return out;
}

ad::Var apply_gradient_scaling(ad::Var gate, double coefficient) {
  if (!std::isfinite(coefficient) || coefficient < 0.0) {
    throw std::invalid_argument("gradient scaling coefficient must be finite and non-negative, got " +
                                std::to_string(coefficient));
  }
  return ad::gradient_scale(gate, Tensor::scalar(coefficient));
}

ad::Var apply_gradient_scaling_composed(ad::Var gate, double coefficient) {
  if (!std::isfinite(coefficient) || coefficient < 0.0) {
    throw std::invalid_argument("gradient scaling coefficient must be finite and non-negative");
  }
  ad::Tape& tape = *gate.tape;
  ad::Var frozen_coefficient = ad::stop_gradient(tape.constant(Tensor::scalar(coefficient)));
  ad::Var frozen_rest = ad::stop_gradient(ad::scale(gate, 1.0 - coefficient));
  return frozen_coefficient * gate + frozen_rest;
}

Tensor coefficient_grid(CoefficientFunction f, std::size_t n) {
  if (n < 2) throw std::invalid_argument("coefficient grid resolution must be >= 2");
  Tensor grid({n, n});
  const double last = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      grid.at(i, j) = gamma(static_cast<double>(i) / last, static_cast<double>(j) / last, f);
    }
  }
  return grid;
}

void write_coefficient_grid_csv(std::ostream& os, CoefficientFunction f, std::size_t n) {
  const Tensor grid = coefficient_grid(f, n);
  os << "x,y,gamma\n";
  char line[96];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = static_cast<double>(i) / static_cast<double>(n - 1);
      const double y = static_cast<double>(j) / static_cast<double>(n - 1);
      std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f\n", x, y, grid.at(i, j));
      os << line;
    }
  }
}

}  // namespace dephn::vg
