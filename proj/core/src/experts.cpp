#include "dephn/experts.hpp"

#include <stdexcept>

namespace dephn::experts {

using ad::Var;

std::string_view expert_kind_name(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::Dnn: return "dnn";
    case ExpertKind::Cross: return "cross";
    case ExpertKind::Field: return "field";
  }
  return "?";
}

ExpertKind parse_expert_kind(std::string_view name) {
  if (name == "dnn") return ExpertKind::Dnn;
  if (name == "cross") return ExpertKind::Cross;
  if (name == "field") return ExpertKind::Field;
  throw std::invalid_argument("unknown expert kind: " + std::string(name));
}

// --- cross ---------------------------------------------------------------------

CrossStack::CrossStack(std::string prefix, std::size_t input_dim, std::size_t output_dim, std::size_t depth,
                       CrossMode mode)
    : prefix_(std::move(prefix)), input_dim_(input_dim), output_dim_(output_dim), depth_(depth), mode_(mode) {}

void CrossStack::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  for (std::size_t l = 0; l < depth_; ++l) {
    const std::string layer = prefix_ + ".layer" + std::to_string(l);
    if (mode_ == CrossMode::DcnV2) {
      store.add(layer + ".weight", ad::kaiming_uniform({input_dim_, input_dim_}, input_dim_, rng));
    } else {
      store.add(layer + ".weight", ad::kaiming_uniform({input_dim_, 1}, input_dim_, rng));
    }
    store.add(layer + ".bias", Tensor({input_dim_}, 0.0));
  }
  store.add(prefix_ + ".projection", ad::kaiming_uniform({input_dim_, output_dim_}, input_dim_, rng));
}

Var CrossStack::interact(ad::Tape& tape, Var x0) const {
  const Shape& s = x0.shape();
  if (s.size() != 2 || s[1] != input_dim_) {
    throw ShapeError("cross stack expects [B x " + std::to_string(input_dim_) + "], got " + shape_to_string(s));
  }
  Var x = x0;
  for (std::size_t l = 0; l < depth_; ++l) {
    const std::string layer = prefix_ + ".layer" + std::to_string(l);
    Var w = tape.parameter(layer + ".weight");
    Var b = tape.parameter(layer + ".bias");
    if (mode_ == CrossMode::DcnV2) {
      x = x0 * (ad::matmul(x, w) + b) + x;
    } else {
      // [B x 1] inner product broadcast across the row.
      x = x0 * ad::matmul(x, w) + b + x;
    }
  }
  return x;
}

Var CrossStack::forward(ad::Tape& tape, Var x0) const {
  return ad::matmul(interact(tape, x0), tape.parameter(prefix_ + ".projection"));
}

// --- field ---------------------------------------------------------------------

FieldStack::FieldStack(std::string prefix, std::size_t fields, std::size_t embed_dim, std::size_t output_dim,
                       std::size_t depth)
    : prefix_(std::move(prefix)), fields_(fields), embed_dim_(embed_dim), output_dim_(output_dim), depth_(depth) {}

void FieldStack::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  for (std::size_t l = 0; l < depth_; ++l) {
    store.add(prefix_ + ".layer" + std::to_string(l) + ".mix", ad::kaiming_uniform({fields_, fields_}, fields_, rng));
  }
  const std::size_t flat = fields_ * embed_dim_;
  store.add(prefix_ + ".projection", ad::kaiming_uniform({flat, output_dim_}, flat, rng));
}

Var FieldStack::interact(ad::Tape& tape, Var h0) const {
  const Shape& s = h0.shape();
  if (s.size() != 3 || s[1] != fields_ || s[2] != embed_dim_) {
    throw ShapeError("field stack expects [B x " + std::to_string(fields_) + " x " + std::to_string(embed_dim_) +
                     "], got " + shape_to_string(s));
  }
  Var h = h0;
  for (std::size_t l = 0; l < depth_; ++l) {
    Var mix = tape.parameter(prefix_ + ".layer" + std::to_string(l) + ".mix");
    h = h0 * ad::matmul(mix, h) + h;
  }
  return h;
}

Var FieldStack::forward(ad::Tape& tape, Var h0) const {
  return ad::matmul(features::flatten_fields(interact(tape, h0)), tape.parameter(prefix_ + ".projection"));
}

// --- dnn -----------------------------------------------------------------------

DnnStack::DnnStack(std::string prefix, std::size_t input_dim, std::vector<std::size_t> widths)
    : prefix_(std::move(prefix)), input_dim_(input_dim), widths_(std::move(widths)) {
  if (widths_.empty()) throw std::invalid_argument("dnn stack needs at least one layer");
}

void DnnStack::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  std::size_t in = input_dim_;
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    const std::string layer = prefix_ + ".layer" + std::to_string(l);
    store.add(layer + ".weight", ad::kaiming_uniform({in, widths_[l]}, in, rng));
    store.add(layer + ".bias", Tensor({widths_[l]}, 0.0));
    in = widths_[l];
  }
}

Var DnnStack::forward(ad::Tape& tape, Var x) const {
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    const std::string layer = prefix_ + ".layer" + std::to_string(l);
    x = ad::matmul(x, tape.parameter(layer + ".weight")) + tape.parameter(layer + ".bias");
    if (l + 1 < widths_.size()) x = ad::relu(x);
  }
  return x;
}

// --- residual ------------------------------------------------------------------

TrainableResidual::TrainableResidual(std::string prefix, std::size_t input_dim, std::size_t output_dim)
    : prefix_(std::move(prefix)), input_dim_(input_dim), output_dim_(output_dim) {}

void TrainableResidual::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  store.add(scale_name(), Tensor({1}, 0.0));
  if (input_dim_ != output_dim_) {
    store.add(prefix_ + ".projection", ad::kaiming_uniform({input_dim_, output_dim_}, input_dim_, rng));
  }
}

Var TrainableResidual::project(ad::Tape& tape, Var expert_in) const {
  if (input_dim_ == output_dim_) return expert_in;
  return ad::matmul(expert_in, tape.parameter(prefix_ + ".projection"));
}

Var TrainableResidual::apply(ad::Tape& tape, Var expert_in, Var expert_out) const {
  return expert_out + project(tape, expert_in) * tape.parameter(scale_name());
}

// --- expert --------------------------------------------------------------------

Expert::Expert(std::string name, ExpertKind kind, const ExpertShape& shape)
    : name_(std::move(name)),
      kind_(kind),
      output_dim_(shape.output_dim),
      residual_(name_ + ".residual", shape.fields * shape.embed_dim, shape.output_dim) {
  const std::size_t in = shape.fields * shape.embed_dim;
  switch (kind) {
    case ExpertKind::Cross:
      cross_ = std::make_unique<CrossStack>(name_ + ".cross", in, shape.output_dim, shape.depth, shape.cross_mode);
      break;
    case ExpertKind::Field:
      field_ = std::make_unique<FieldStack>(name_ + ".field", shape.fields, shape.embed_dim, shape.output_dim,
                                            shape.depth);
      break;
    case ExpertKind::Dnn: {
      std::vector<std::size_t> widths = shape.dnn_hidden;
      widths.push_back(shape.output_dim);
      dnn_ = std::make_unique<DnnStack>(name_ + ".dnn", in, std::move(widths));
      break;
    }
  }
}

void Expert::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  if (cross_) cross_->register_parameters(store, rng);
  if (field_) field_->register_parameters(store, rng);
  if (dnn_) dnn_->register_parameters(store, rng);
  residual_.register_parameters(store, rng);
}

Var Expert::forward(ad::Tape& tape, const features::BranchInputs& in) const {
  switch (kind_) {
    case ExpertKind::Cross:
      return residual_.apply(tape, in.cross_flat, cross_->forward(tape, in.cross_flat));
    case ExpertKind::Field: {
      Var out = field_->forward(tape, in.field_grid);
      return residual_.apply(tape, features::flatten_fields(in.field_grid), out);
    }
    case ExpertKind::Dnn:
      return residual_.apply(tape, in.dnn_flat, dnn_->forward(tape, in.dnn_flat));
  }
  throw std::logic_error("unreachable expert kind");
}

// --- bank ----------------------------------------------------------------------

ExpertBank::ExpertBank(std::size_t tasks, ExpertBankConfig config) : config_(std::move(config)) {
  for (std::size_t k = 0; k < config_.public_kinds.size(); ++k) {
    public_.push_back(std::make_unique<Expert>("expert.pub" + std::to_string(k), config_.public_kinds[k], config_.shape));
  }
  private_.resize(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t k = 0; k < config_.private_kinds.size(); ++k) {
      private_[t].push_back(std::make_unique<Expert>(
          "expert.t" + std::to_string(t) + ".pri" + std::to_string(k), config_.private_kinds[k], config_.shape));
    }
  }
}

void ExpertBank::register_parameters(ad::ParameterStore& store, Rng& rng) const {
  for (const auto& e : public_) e->register_parameters(store, rng);
  for (const auto& task : private_) {
    for (const auto& e : task) e->register_parameters(store, rng);
  }
}

std::vector<Var> ExpertBank::forward_public(ad::Tape& tape, const features::BranchInputs& in) const {
  std::vector<Var> out;
  out.reserve(public_.size());
  for (const auto& e : public_) out.push_back(e->forward(tape, in));
  return out;
}

std::vector<Var> ExpertBank::forward_private(ad::Tape& tape, const features::BranchInputs& in, std::size_t task) const {
  std::vector<Var> out;
  out.reserve(private_.at(task).size());
  for (const auto& e : private_[task]) out.push_back(e->forward(tape, in));
  return out;
}

}  // namespace dephn::experts
