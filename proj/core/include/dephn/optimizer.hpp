#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "dephn/parameters.hpp"
#include "dephn/tape.hpp"

namespace dephn::optim {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter name and created lazily.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// Applies one update to every trainable parameter that has a gradient.
  void step(ad::ParameterStore& store, const ad::Gradients& grads);

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace dephn::optim
