#pragma once

#include "selfboost/model.hpp"

namespace selfboost {

struct GeneratorSpec {
  ModelSpec model;
  /// Channel width of the fused maps; 0 selects the final stage width.
  std::size_t fuse_width = 0;

  std::size_t fused_channels() const { return fuse_width ? fuse_width : model.final_width(); }
};

template <typename S>
struct GeneratorOutput {
  std::vector<Var<S>> fused;    // fused maps for stages 1..K, spatially equal to F_k
  std::vector<Var<S>> logits;   // target-head logits for stages 1..K-1
  std::vector<Var<S>> targets;  // softmax(logits / tau) for stages 1..K-1
};

/// Top-down label generator.
///
/// The deepest map is projected by a 1x1 conv alone. Every shallower fused
/// map is refine3x3(upsample2x(fused_{k+1}) + lateral1x1(F_k)), and a target
/// head with the exit-head layout turns it into class logits.
template <typename S>
class LabelGenerator {
 public:
  explicit LabelGenerator(GeneratorSpec spec, std::uint64_t seed = 0);

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  void init_params(std::uint64_t seed) { init_kaiming(params_, seed); }

  GeneratorOutput<S> fuse_topdown(std::span<const Var<S>> params, std::span<const Var<S>> features, S tau) const;

  /// Soft targets T_1..T_{K-1}. With `stop_grad_into_model` the result is a
  /// constant with respect to both the model and the generator, and the
  /// stored generator parameters are used (`params` may be empty). Otherwise
  /// `params` must be bound on the features' tape and the targets stay
  /// differentiable through both.
  std::vector<Var<S>> soft_targets(std::span<const Var<S>> params, std::span<const Var<S>> features, S tau,
                                   bool stop_grad_into_model) const;

 private:
  GeneratorSpec spec_;
  ParameterSet<S> params_;
  std::vector<std::size_t> lateral_w_, lateral_b_, refine_w_, refine_b_;
  std::vector<std::size_t> head_conv_w_, head_conv_b_, head_fc_w_, head_fc_b_;
};

extern template class LabelGenerator<float>;
extern template class LabelGenerator<double>;

}  // namespace selfboost
