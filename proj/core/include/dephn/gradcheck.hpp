#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dephn/tape.hpp"

namespace dephn::ad {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

/// Builds a scalar loss on a fresh tape bound to the store.
using LossBuilder = std::function<Var(Tape&)>;

/// Central-difference audit of every trainable parameter coordinate (or only the
/// named ones, when `only` is non-empty). Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, denominator_floor); the floor keeps
/// gradients at the level of the difference quotient's rounding noise from
/// dominating the report. Throws NonFiniteError when a loss or gradient is not
/// finite. The store is restored before returning.
GradCheckReport finite_difference_check(ParameterStore& store, const LossBuilder& loss, double eps,
                                        const std::vector<std::string>& only = {}, double denominator_floor = 1e-8);

}  // namespace dephn::ad
