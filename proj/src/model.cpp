#include "selfboost/model.hpp"

namespace selfboost {

void ModelSpec::validate() const {
  if (widths.size() < 2) throw ParameterError("a multi-exit model needs at least 2 stages");
  if (in_channels == 0 || classes < 2) throw ParameterError("model needs in_channels >= 1 and classes >= 2");
  for (std::size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] == 0) throw ParameterError("stage widths must be positive");
    if (k > 0 && widths[k] < widths[k - 1]) throw ParameterError("stage widths must be non-decreasing");
  }
}

ModelSpec ModelSpec::named(std::string_view name, std::size_t classes) {
  ModelSpec spec;
  spec.classes = classes;
  if (name == "desk-cnn-4") {
    spec.widths = {16, 32, 64, 128};
  } else if (name == "desk-cnn-3") {
    spec.widths = {16, 32, 64};
  } else {
    throw ParameterError("unknown backbone '" + std::string(name) + "'");
  }
  return spec;
}

namespace {

template <typename S>
Var<S> stage_block(const Var<S>& h, const Var<S>& w, const Var<S>& b, Downsample mode) {
  if (mode == Downsample::strided_conv) return relu(conv2d(h, w, b, Conv2dParams{2, 1}));
  return avg_pool2x(relu(conv2d(h, w, b, Conv2dParams{1, 1})));
}

template <typename S>
Var<S> final_head(const Var<S>& features, const Var<S>& w, const Var<S>& b) {
  return linear(global_avg_pool(features), w, b);
}

}  // namespace

template <typename S>
Var<S> exit_head(const Var<S>& features, const Var<S>& conv_w, const Var<S>& conv_b, const Var<S>& fc_w,
                 const Var<S>& fc_b, std::size_t stride) {
  return linear(global_avg_pool(relu(conv2d(features, conv_w, conv_b, Conv2dParams{stride, 1}))), fc_w, fc_b);
}

template <typename S>
MultiExitModel<S>::MultiExitModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t K = spec_.stages(), top = spec_.final_width(), C = spec_.classes;
  std::size_t in = spec_.in_channels;
  for (std::size_t k = 0; k < K; ++k) {
    const std::string p = "stage" + std::to_string(k + 1);
    stage_w_.push_back(params_.add(p + ".conv.weight", Tensor<S>({spec_.widths[k], in, 3, 3})));
    stage_b_.push_back(params_.add(p + ".conv.bias", Tensor<S>({spec_.widths[k]})));
    in = spec_.widths[k];
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const std::string p = "exit" + std::to_string(k + 1);
    exit_conv_w_.push_back(params_.add(p + ".conv.weight", Tensor<S>({top, spec_.widths[k], 3, 3})));
    exit_conv_b_.push_back(params_.add(p + ".conv.bias", Tensor<S>({top})));
    exit_fc_w_.push_back(params_.add(p + ".fc.weight", Tensor<S>({C, top})));
    exit_fc_b_.push_back(params_.add(p + ".fc.bias", Tensor<S>({C})));
  }
  final_w_ = params_.add("final.fc.weight", Tensor<S>({C, top}));
  final_b_ = params_.add("final.fc.bias", Tensor<S>({C}));
  init_params(seed);
}

template <typename S>
void MultiExitModel<S>::check_input(const Shape& x) const {
  const std::size_t factor = std::size_t{1} << spec_.stages();
  if (x.size() != 4 || x[1] != spec_.in_channels) {
    throw DimensionError("model input must be (N, " + std::to_string(spec_.in_channels) + ", H, W), got " +
                         to_string(x));
  }
  if (x[2] % factor || x[3] % factor) {
    throw DimensionError("input spatial size " + to_string(x) + " is not divisible by 2^" +
                         std::to_string(spec_.stages()));
  }
}

template <typename S>
MultiExitOutput<S> MultiExitModel<S>::forward(std::span<const Var<S>> params, const Var<S>& x, Exits exits) const {
  if (params.size() != params_.size()) {
    throw DimensionError("model forward got " + std::to_string(params.size()) + " parameters, expected " +
                         std::to_string(params_.size()));
  }
  check_input(x.shape());
  const std::size_t K = spec_.stages();
  MultiExitOutput<S> out;
  Var<S> h = x;
  for (std::size_t k = 0; k < K; ++k) {
    h = stage_block(h, params[stage_w_[k]], params[stage_b_[k]], spec_.downsample);
    out.features.push_back(h);
  }
  if (exits == Exits::all) {
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const std::size_t stride = std::size_t{1} << (K - 1 - k);
      out.logits.push_back(exit_head(out.features[k], params[exit_conv_w_[k]], params[exit_conv_b_[k]],
                                     params[exit_fc_w_[k]], params[exit_fc_b_[k]], stride));
    }
  }
  out.logits.push_back(final_head(out.features.back(), params[final_w_], params[final_b_]));
  return out;
}

template <typename S>
std::vector<Tensor<S>> MultiExitModel<S>::predict_logits(const Tensor<S>& x, Exits exits) const {
  Tape<S> tape;
  NoGradGuard<S> guard(tape);
  const auto p = params_.bind(tape, false);
  const auto out = forward(p, tape.constant(x), exits);
  std::vector<Tensor<S>> logits;
  for (const auto& z : out.logits) logits.push_back(z.value());
  return logits;
}

template <typename S>
std::vector<std::size_t> MultiExitModel<S>::parameter_indices(Exits exits) const {
  if (exits == Exits::all) {
    std::vector<std::size_t> all(params_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < spec_.stages(); ++k) {
    used.push_back(stage_w_[k]);
    used.push_back(stage_b_[k]);
  }
  used.push_back(final_w_);
  used.push_back(final_b_);
  return used;
}

template <typename S>
InferenceModel<S> MultiExitModel<S>::strip_for_inference() const {
  ParameterSet<S> kept;
  for (std::size_t k = 0; k < spec_.stages(); ++k) {
    kept.add(params_[stage_w_[k]].name, params_[stage_w_[k]].value);
    kept.add(params_[stage_b_[k]].name, params_[stage_b_[k]].value);
  }
  kept.add(params_[final_w_].name, params_[final_w_].value);
  kept.add(params_[final_b_].name, params_[final_b_].value);
  return InferenceModel<S>(spec_, std::move(kept));
}

template <typename S>
Tensor<S> InferenceModel<S>::predict(const Tensor<S>& x) const {
  Tape<S> tape;
  NoGradGuard<S> guard(tape);
  const auto p = params_.bind(tape, false);
  const std::size_t K = spec_.stages();
  Var<S> h = tape.constant(x);
  for (std::size_t k = 0; k < K; ++k) h = stage_block(h, p[2 * k], p[2 * k + 1], spec_.downsample);
  return final_head(h, p[2 * K], p[2 * K + 1]).value();
}

template <typename S>
Tensor<S> ensemble_output(std::span<const Tensor<S>> logits, S tau) {
  if (logits.empty()) throw DimensionError("ensemble_output needs at least one exit");
  Tensor<S> acc(logits[0].shape());
  for (const auto& z : logits) {
    if (z.shape() != logits[0].shape()) {
      throw DimensionError("ensemble_output: exit shapes differ, " + to_string(z.shape()) + " vs " +
                           to_string(logits[0].shape()));
    }
    acc.mutable_array() += softmax_rows(z, tau).array();
  }
  acc.mutable_array() /= static_cast<S>(logits.size());
  return acc;
}

template class MultiExitModel<float>;
template class MultiExitModel<double>;
template class InferenceModel<float>;
template class InferenceModel<double>;

#define SELFBOOST_INSTANTIATE(S)                                                                          \
  template Var<S> exit_head<S>(const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, const Var<S>&, \
                               std::size_t);                                                              \
  template Tensor<S> ensemble_output<S>(std::span<const Tensor<S>>, S);

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost
