#include "dephn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dephn::ad {
namespace {

double evaluate(ParameterStore& store, const LossBuilder& loss, const std::string& name, std::size_t index) {
  Tape tape(store);
  const double v = loss(tape).item();
  if (!std::isfinite(v)) {
    throw NonFiniteError("non-finite loss while perturbing " + name + "[" + std::to_string(index) + "]");
  }
  return v;
}

}  // namespace

GradCheckReport finite_difference_check(ParameterStore& store, const LossBuilder& loss, double eps,
                                        const std::vector<std::string>& only, double denominator_floor) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_check: eps must be positive");
  if (!(denominator_floor > 0.0)) throw std::invalid_argument("finite_difference_check: denominator_floor must be positive");

  Gradients analytic;
  {
    Tape tape(store);
    Var l = loss(tape);
    if (!std::isfinite(l.item())) throw NonFiniteError("non-finite loss at the unperturbed point");
    analytic = tape.backward(l);
  }

  GradCheckReport report;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    if (!only.empty() && std::find(only.begin(), only.end(), p.name) == only.end()) continue;
    const Tensor& grad = analytic.at(p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw NonFiniteError("non-finite analytic gradient at " + p.name + "[" + std::to_string(i) + "]");
      }
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double up = evaluate(store, loss, p.name, i);
      p.value[i] = saved - eps;
      const double down = evaluate(store, loss, p.name, i);
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(grad[i] - numeric) / std::max(std::abs(grad[i]), denominator_floor);
      ++report.coordinates_checked;
      if (rel > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = std::max(rel, report.max_relative_error);
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.worst_analytic = grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dephn::ad
