#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dephn/features.hpp"
#include "dephn/ops.hpp"
#include "dephn/parameters.hpp"

namespace dephn::experts {

enum class CrossMode { Dcn, DcnV2 };
enum class ExpertKind { Dnn, Cross, Field };

std::string_view expert_kind_name(ExpertKind kind);
ExpertKind parse_expert_kind(std::string_view name);

/// Residual cross network. DCN: x_{l+1} = x0 * (x_l . w_l) + b_l + x_l.
/// DCNv2: x_{l+1} = x0 * (x_l W_l + b_l) + x_l. The final vector is projected
/// to the output dimension by a bias-free linear map.
class CrossStack {
 public:
  CrossStack(std::string prefix, std::size_t input_dim, std::size_t output_dim, std::size_t depth, CrossMode mode);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  /// Layer recursion only, [B x n] -> [B x n].
  ad::Var interact(ad::Tape& tape, ad::Var x0) const;
  ad::Var forward(ad::Tape& tape, ad::Var x0) const;

  std::size_t input_dim() const { return input_dim_; }

 private:
  std::string prefix_;
  std::size_t input_dim_;
  std::size_t output_dim_;
  std::size_t depth_;
  CrossMode mode_;
};

/// Vector-wise field interaction: H_{l+1}[i] = H0[i] * (sum_j M_l[i,j] H_l[j]) + H_l[i].
class FieldStack {
 public:
  FieldStack(std::string prefix, std::size_t fields, std::size_t embed_dim, std::size_t output_dim, std::size_t depth);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  /// [B x c x d_f] -> [B x c x d_f].
  ad::Var interact(ad::Tape& tape, ad::Var h0) const;
  /// Flattened and projected, [B x d_e].
  ad::Var forward(ad::Tape& tape, ad::Var h0) const;

 private:
  std::string prefix_;
  std::size_t fields_;
  std::size_t embed_dim_;
  std::size_t output_dim_;
  std::size_t depth_;
};

/// Affine + relu layers; the last layer is linear.
class DnnStack {
 public:
  DnnStack(std::string prefix, std::size_t input_dim, std::vector<std::size_t> widths);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  ad::Var forward(ad::Tape& tape, ad::Var x) const;

  std::size_t output_dim() const { return widths_.back(); }

 private:
  std::string prefix_;
  std::size_t input_dim_;
  std::vector<std::size_t> widths_;
};

/// out = expert_out + scale * project(expert_in). The scale starts at 0; the
/// projection is omitted (identity) when the dimensions already agree.
class TrainableResidual {
 public:
  TrainableResidual(std::string prefix, std::size_t input_dim, std::size_t output_dim);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  ad::Var apply(ad::Tape& tape, ad::Var expert_in, ad::Var expert_out) const;
  ad::Var project(ad::Tape& tape, ad::Var expert_in) const;

  std::string scale_name() const { return prefix_ + ".scale"; }

 private:
  std::string prefix_;
  std::size_t input_dim_;
  std::size_t output_dim_;
};

struct ExpertShape {
  std::size_t fields = 0;
  std::size_t embed_dim = 0;
  std::size_t output_dim = 16;
  std::size_t depth = 2;
  std::vector<std::size_t> dnn_hidden{64, 32};
  CrossMode cross_mode = CrossMode::DcnV2;
};

/// One expert: an interaction stack plus its trainable residual link. Each kind
/// reads its own branch of the feature pipeline.
class Expert {
 public:
  Expert(std::string name, ExpertKind kind, const ExpertShape& shape);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;
  ad::Var forward(ad::Tape& tape, const features::BranchInputs& in) const;

  const std::string& name() const { return name_; }
  ExpertKind kind() const { return kind_; }
  std::size_t output_dim() const { return output_dim_; }

 private:
  std::string name_;
  ExpertKind kind_;
  std::size_t output_dim_;
  std::unique_ptr<CrossStack> cross_;
  std::unique_ptr<FieldStack> field_;
  std::unique_ptr<DnnStack> dnn_;
  TrainableResidual residual_;
};

struct ExpertBankConfig {
  std::vector<ExpertKind> public_kinds{ExpertKind::Dnn, ExpertKind::Dnn, ExpertKind::Dnn};
  std::vector<ExpertKind> private_kinds{ExpertKind::Cross, ExpertKind::Field};
  ExpertShape shape;
};

/// Public experts are shared by every task; private experts are instantiated once per task.
class ExpertBank {
 public:
  ExpertBank(std::size_t tasks, ExpertBankConfig config);

  void register_parameters(ad::ParameterStore& store, Rng& rng) const;

  std::size_t public_count() const { return public_.size(); }
  std::size_t private_count() const { return config_.private_kinds.size(); }
  std::size_t task_count() const { return private_.size(); }
  std::size_t output_dim() const { return config_.shape.output_dim; }

  const Expert& public_expert(std::size_t k) const { return *public_[k]; }
  const Expert& private_expert(std::size_t task, std::size_t k) const { return *private_[task][k]; }

  std::vector<ad::Var> forward_public(ad::Tape& tape, const features::BranchInputs& in) const;
  std::vector<ad::Var> forward_private(ad::Tape& tape, const features::BranchInputs& in, std::size_t task) const;

 private:
  ExpertBankConfig config_;
  std::vector<std::unique_ptr<Expert>> public_;
  std::vector<std::vector<std::unique_ptr<Expert>>> private_;
};

}  // namespace dephn::experts
