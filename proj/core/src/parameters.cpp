#include "dephn/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace dephn::ad {

Parameter& ParameterStore::add(std::string name, Tensor init, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(init), trainable});
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<std::string> ParameterStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.name);
  }
  return out;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  return uniform_init(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace dephn::ad
