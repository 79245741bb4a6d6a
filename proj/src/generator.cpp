#include "selfboost/generator.hpp"

namespace selfboost {

template <typename S>
LabelGenerator<S>::LabelGenerator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.model.validate();
  const auto& m = spec_.model;
  const std::size_t K = m.stages(), fuse = spec_.fused_channels(), top = m.final_width(), C = m.classes;
  for (std::size_t k = 0; k < K; ++k) {
    const std::string p = "lateral" + std::to_string(k + 1);
    lateral_w_.push_back(params_.add(p + ".weight", Tensor<S>({fuse, m.widths[k], 1, 1})));
    lateral_b_.push_back(params_.add(p + ".bias", Tensor<S>({fuse})));
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const std::string p = "refine" + std::to_string(k + 1);
    refine_w_.push_back(params_.add(p + ".weight", Tensor<S>({fuse, fuse, 3, 3})));
    refine_b_.push_back(params_.add(p + ".bias", Tensor<S>({fuse})));
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const std::string p = "head" + std::to_string(k + 1);
    head_conv_w_.push_back(params_.add(p + ".conv.weight", Tensor<S>({top, fuse, 3, 3})));
    head_conv_b_.push_back(params_.add(p + ".conv.bias", Tensor<S>({top})));
    head_fc_w_.push_back(params_.add(p + ".fc.weight", Tensor<S>({C, top})));
    head_fc_b_.push_back(params_.add(p + ".fc.bias", Tensor<S>({C})));
  }
  init_params(seed);
}

template <typename S>
GeneratorOutput<S> LabelGenerator<S>::fuse_topdown(std::span<const Var<S>> params, std::span<const Var<S>> features,
                                                   S tau) const {
  const auto& m = spec_.model;
  const std::size_t K = m.stages();
  if (params.size() != params_.size()) {
    throw DimensionError("generator got " + std::to_string(params.size()) + " parameters, expected " +
                         std::to_string(params_.size()));
  }
  if (features.size() != K) {
    throw DimensionError("generator expects " + std::to_string(K) + " stage features, got " +
                         std::to_string(features.size()));
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& s = features[k].shape();
    if (s.size() != 4 || s[1] != m.widths[k]) {
      throw DimensionError("stage " + std::to_string(k + 1) + " features " + to_string(s) + " do not have " +
                           std::to_string(m.widths[k]) + " channels");
    }
    if (k > 0 && (s[2] * 2 != features[k - 1].shape()[2] || s[3] * 2 != features[k - 1].shape()[3])) {
      throw DimensionError("stage " + std::to_string(k + 1) + " features are not half the size of stage " +
                           std::to_string(k));
    }
  }

  GeneratorOutput<S> out;
  out.fused.resize(K);
  const Conv2dParams pointwise{1, 0}, same{1, 1};
  out.fused[K - 1] = conv2d(features[K - 1], params[lateral_w_[K - 1]], params[lateral_b_[K - 1]], pointwise);
  for (std::size_t k = K - 1; k-- > 0;) {
    const Var<S> merged = add(upsample_bilinear2x(out.fused[k + 1]),
                              conv2d(features[k], params[lateral_w_[k]], params[lateral_b_[k]], pointwise));
    out.fused[k] = conv2d(merged, params[refine_w_[k]], params[refine_b_[k]], same);
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const std::size_t stride = std::size_t{1} << (K - 1 - k);
    out.logits.push_back(exit_head(out.fused[k], params[head_conv_w_[k]], params[head_conv_b_[k]],
                                   params[head_fc_w_[k]], params[head_fc_b_[k]], stride));
    out.targets.push_back(softmax_tempered(out.logits.back(), tau));
  }
  return out;
}

template <typename S>
std::vector<Var<S>> LabelGenerator<S>::soft_targets(std::span<const Var<S>> params, std::span<const Var<S>> features,
                                                    S tau, bool stop_grad_into_model) const {
  if (!stop_grad_into_model) return fuse_topdown(params, features, tau).targets;
  if (features.empty()) throw DimensionError("generator needs stage features");
  Tape<S>& tape = features.front().tape();
  NoGradGuard<S> guard(tape);
  std::vector<Var<S>> frozen_features;
  for (const auto& f : features) frozen_features.push_back(detach(f));
  const auto frozen_params = params_.bind(tape, false);
  return fuse_topdown(frozen_params, frozen_features, tau).targets;
}

template class LabelGenerator<float>;
template class LabelGenerator<double>;

}  // namespace selfboost
