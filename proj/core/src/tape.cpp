#include "dephn/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace dephn::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Variable: return "variable";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::Transpose: return "transpose";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Abs: return "abs";
    case Op::Pow: return "pow";
    case Op::Sum: return "sum";
    case Op::SumLast: return "sum_last";
    case Op::Mean: return "mean";
    case Op::Softmax: return "softmax";
    case Op::Gather: return "gather";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::StopGradient: return "stop_gradient";
    case Op::GradientScale: return "gradient_scale";
    case Op::LogLoss: return "logloss";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->node(id).value; }

Var Tape::constant(Tensor value) {
  TapeNode n;
  n.id = nodes_.size();
  n.value = std::move(value);
  n.tag.op = Op::Constant;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value, std::string name) {
  TapeNode n;
  n.id = nodes_.size();
  n.value = std::move(value);
  n.tag.op = Op::Variable;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  named_.emplace_back(std::move(name), nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return Var{this, it->second};
  if (!params_) throw std::logic_error("tape has no parameter store; cannot bind " + name);
  const Parameter& p = params_->get(name);
  TapeNode n;
  n.id = nodes_.size();
  n.value = p.value;
  n.tag.op = Op::Parameter;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  bound_.emplace(name, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, Op op, std::vector<std::size_t> parents, BackwardFn backward) {
  TapeNode n;
  n.id = nodes_.size();
  n.value = std::move(value);
  n.tag.op = op;
  for (auto p : parents) {
    if (p >= n.id) throw std::logic_error("parent id not older than child: graph would contain a cycle");
    if (nodes_[p].requires_grad) n.requires_grad = true;
  }
  n.tag.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::adjoint(std::size_t id) {
  TapeNode& n = nodes_[id];
  if (n.adjoint.size() != n.value.size() || n.adjoint.shape() != n.value.shape()) {
    n.adjoint = Tensor(n.value.shape(), 0.0);
  }
  return n.adjoint;
}

void Tape::set_gradient_scale(Var node, Tensor gamma) {
  TapeNode& n = nodes_.at(node.id);
  if (n.tag.op != Op::GradientScale) {
    throw std::invalid_argument("set_gradient_scale on a node that is not a gradient_scale node");
  }
  for (double g : gamma.values()) {
    if (!std::isfinite(g)) throw std::invalid_argument("gradient scale must be finite");
  }
  if (gamma.size() != n.gradient_scale.size()) {
    throw ShapeError("gradient scale shape " + shape_to_string(gamma.shape()) + " does not match " +
                     shape_to_string(n.gradient_scale.shape()));
  }
  n.gradient_scale = std::move(gamma);
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to a different tape");
  const TapeNode& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_to_string(root.value.shape()));
  }
  for (const auto& n : nodes_) {
    for (auto p : n.tag.parents) {
      if (p >= n.id) throw std::logic_error("backward: cycle detected at node " + std::to_string(n.id));
    }
  }

  for (auto& n : nodes_) n.adjoint = Tensor(n.value.shape(), 0.0);
  nodes_[loss.id].adjoint[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    TapeNode& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }

  Gradients grads;
  if (params_) {
    for (const auto& p : params_->all()) {
      if (!p.trainable) continue;
      auto it = bound_.find(p.name);
      grads.emplace(p.name, it == bound_.end() ? Tensor(p.value.shape(), 0.0) : nodes_[it->second].adjoint);
    }
  }
  for (const auto& [name, id] : named_) grads[name] = nodes_[id].adjoint;
  return grads;
}

}  // namespace dephn::ad
