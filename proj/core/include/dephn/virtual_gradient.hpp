#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "dephn/ops.hpp"
#include "dephn/tensor.hpp"

// Virtual gradient coefficients: a training-only rescaling of the gradient that
// reaches each gate G[t][k][p], driven by how similar task t's batch labels are
// to every other task's and how far apart their gates for the same (k, p) sit.
namespace dephn::vg {

enum class SimilarityMeasure { AbsCosine, AbsPearson };

enum class CoefficientFunction { MulCos, MulAbs, MulSquare, MulSqrt, AddCos, AddAbs, AddSquare, AddSqrt };

inline constexpr std::array<CoefficientFunction, 8> kAllFunctions{
    CoefficientFunction::MulCos, CoefficientFunction::MulAbs, CoefficientFunction::MulSquare,
    CoefficientFunction::MulSqrt, CoefficientFunction::AddCos, CoefficientFunction::AddAbs,
    CoefficientFunction::AddSquare, CoefficientFunction::AddSqrt};

inline constexpr std::array<SimilarityMeasure, 2> kAllMeasures{SimilarityMeasure::AbsCosine,
                                                                SimilarityMeasure::AbsPearson};

std::string_view function_name(CoefficientFunction f);  // "add-sqrt", ...
CoefficientFunction parse_function(std::string_view name);
std::string_view measure_name(SimilarityMeasure m);      // "cosine" | "pearson"
SimilarityMeasure parse_measure(std::string_view name);

/// |cos| or |Pearson| of two equal-length label vectors, in [0, 1]. A zero-norm
/// (cosine) or zero-variance (Pearson) vector yields 0. Throws on length mismatch
/// or fewer than two entries.
double batch_label_similarity(std::span<const double> a, std::span<const double> b, SimilarityMeasure measure);

/// min(1, |g_t - g_j|).
double gate_difference(double gate_t, double gate_j);

/// Closed-form coefficient in [0, 2] for x = task similarity, y = gate difference, both in [0, 1].
double gamma(double x, double y, CoefficientFunction f);

struct GammaContext {
  std::vector<std::vector<double>> labels;  // per task, batch labels
  Tensor gates;                              // snapshot [T x K x P]
  SimilarityMeasure measure = SimilarityMeasure::AbsPearson;
  CoefficientFunction function = CoefficientFunction::AddSqrt;

  std::size_t tasks() const { return labels.size(); }
};

/// Product over j != t of gamma(phi(Y_j, Y_t), min(1, |G[t][k][p] - G[j][k][p]|)); 1 for a single task.
double aggregate_gamma(const GammaContext& ctx, std::size_t task, std::size_t expert, std::size_t mapping);

/// All aggregate coefficients as a [T x K x P] tensor, computing each task-pair similarity once.
Tensor gamma_table(const GammaContext& ctx);

/// Forward-identity node whose backward multiplies the gradient by `coefficient`.
/// Rejects non-finite or negative coefficients.
ad::Var apply_gradient_scaling(ad::Var gate, double coefficient);

/// The same contract built from stop_gradient only:
/// stop(c) * gate + stop((1 - c) * gate). Its forward value can differ from the
/// gate by rounding, which is why training uses apply_gradient_scaling.
ad::Var apply_gradient_scaling_composed(ad::Var gate, double coefficient);

/// n x n grid, entry [i][j] = gamma(i / (n-1), j / (n-1)). Requires n >= 2.
Tensor coefficient_grid(CoefficientFunction f, std::size_t n);

/// CSV with header "x,y,gamma", x-major, six decimal places.
void write_coefficient_grid_csv(std::ostream& os, CoefficientFunction f, std::size_t n);

}  // namespace dephn::vg
