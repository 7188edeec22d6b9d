#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dephn/parameters.hpp"
#include "dephn/tensor.hpp"

namespace dephn::ad {

enum class Op : std::uint8_t {
  Constant,
  Variable,
  Parameter,
  Add,
  Sub,
  Mul,
  MatMul,
  Concat,
  Slice,
  Reshape,
  Transpose,
  Sigmoid,
  Relu,
  Tanh,
  Sin,
  Cos,
  Log,
  Exp,
  Abs,
  Pow,
  Sum,
  SumLast,
  Mean,
  Softmax,
  Gather,
  Scale,
  AddScalar,
  StopGradient,
  GradientScale,
  LogLoss,
};

std::string_view op_name(Op op);

struct OpTag {
  Op op = Op::Constant;
  std::vector<std::size_t> parents;
};

class Tape;

using BackwardFn = std::function<void(Tape&, std::size_t self)>;

/// One recorded value. `adjoint` is sized like `value` once backward() runs.
struct TapeNode {
  std::size_t id = 0;
  Tensor value;
  Tensor adjoint;
  OpTag tag;
  bool requires_grad = false;
  BackwardFn backward;
  Tensor gradient_scale;  // GradientScale nodes only
};

/// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
};

using Gradients = std::map<std::string, Tensor>;

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// every parent id is smaller than its child's id and the graph is acyclic by
/// construction; backward() still verifies this before sweeping.
///
/// A tape is confined to one thread. Parameters are read from the bound store
/// at first use and become leaves; the store itself is never written.
class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParameterStore& params) : params_(&params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free leaf that receives a gradient under `name`.
  Var variable(Tensor value, std::string name);
  /// Leaf bound to a parameter of the store; created once per tape.
  Var parameter(const std::string& name);

  Var push(Tensor value, Op op, std::vector<std::size_t> parents, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Returns one gradient per trainable
  /// parameter of the bound store (zeros when unreached) and per named variable.
  Gradients backward(Var loss);

  /// Sets Γ on a GradientScale node after the forward pass.
  void set_gradient_scale(Var node, Tensor gamma);

  const TapeNode& node(std::size_t id) const { return nodes_[id]; }
  TapeNode& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  const ParameterStore* parameters() const { return params_; }

  /// Adjoint accumulator of a node during backward; allocated on first access.
  Tensor& adjoint(std::size_t id);

 private:
  std::deque<TapeNode> nodes_;  // deque: node references stay valid while the tape grows
  const ParameterStore* params_ = nullptr;
  std::unordered_map<std::string, std::size_t> bound_;
  std::vector<std::pair<std::string, std::size_t>> named_;
};

}  // namespace dephn::ad
