#include "dephn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dephn::optim {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(config_.epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
}

void Adam::step(ad::ParameterStore& store, const ad::Gradients& grads) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& param : store.all()) {
    if (!param.trainable) continue;
    auto it = grads.find(param.name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.size() != param.value.size()) {
      throw ShapeError("adam: gradient for " + param.name + " has shape " + shape_to_string(g.shape()));
    }
    auto [slot, inserted] = moments_.try_emplace(param.name);
    if (inserted) {
      slot->second.m = Tensor(param.value.shape(), 0.0);
      slot->second.v = Tensor(param.value.shape(), 0.0);
    }
    double* m = slot->second.m.data();
    double* v = slot->second.v.data();
    double* w = param.value.data();
    const double* gd = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gd[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gd[i] * gd[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace dephn::optim
