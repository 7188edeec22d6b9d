#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dephn/tape.hpp"

// Differentiable primitives. Binary elementwise ops broadcast numpy-style;
// a mismatch throws ShapeError naming both shapes.
namespace dephn::ad {

struct PowOptions {
  /// Magnitude cap for the derivative where it diverges (x^p with p < 1 at x = 0).
  double derivative_cap = 1e6;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard

/// Matrix product over the last two axes. Accepts rank-2 x rank-2, rank-3 x rank-3
/// (batched), rank-3 x rank-2 (shared right operand) and rank-2 x rank-3 (shared left operand).
Var matmul(Var a, Var b);

Var concat_last(std::span<const Var> parts);
Var slice_last(Var x, std::size_t begin, std::size_t length);
Var reshape(Var x, Shape shape);
Var transpose_last2(Var x);

Var sigmoid(Var x);
Var relu(Var x);
Var tanh(Var x);
Var sin(Var x);
Var cos(Var x);
/// Natural log; throws std::domain_error on non-positive input.
Var log(Var x);
Var exp(Var x);
/// |x| with derivative 0 at x = 0.
Var abs(Var x);
Var power(Var x, double exponent, PowOptions options = {});

Var sum(Var x);        // all elements -> scalar
Var sum_last(Var x);   // [..., n] -> [..., 1]
Var mean(Var x);       // all elements -> scalar
Var softmax_last(Var x);

/// Rows of a [V x d] table selected by index -> [n x d]. Throws std::out_of_range.
Var gather_rows(Var table, std::span<const std::size_t> rows);

Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

/// Forward identity (bit-equal copy), zero adjoint to the parent.
Var stop_gradient(Var x);

/// Forward identity (bit-equal copy); backward multiplies the adjoint by Γ,
/// broadcast against x. Γ may be replaced via Tape::set_gradient_scale before backward.
Var gradient_scale(Var x, Tensor gamma);

/// Mean binary cross-entropy of probabilities against {0,1} labels, with the
/// probabilities clamped to (clamp, 1 - clamp). Gradient is zero where clamped.
Var binary_logloss(Var probabilities, const Tensor& labels, double clamp = 1e-7);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace dephn::ad
