#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "dephn/random.hpp"
#include "dephn/tensor.hpp"

namespace dephn::ad {

struct Parameter {
  std::string name;  // dotted path, e.g. "expert.pub0.layer0.weight"
  Tensor value;
  bool trainable = true;
};

/// Owns model parameters in registration order. Enumeration order is stable and
/// names are unique, so every trainable parameter appears exactly once.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor init, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Tensor& value(const std::string& name) { return get(name).value; }
  const Tensor& value(const std::string& name) const { return get(name).value; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  /// Names with the given prefix, in registration order.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Initializers. Kaiming-uniform draws from U(-b, b) with b = sqrt(6 / fan_in).
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);
Tensor uniform_init(Shape shape, double bound, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace dephn::ad
