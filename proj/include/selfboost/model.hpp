#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfboost/ops.hpp"
#include "selfboost/parameters.hpp"

namespace selfboost {

/// How a stage halves its spatial size.
enum class Downsample { strided_conv, avg_pool };

/// Architecture of a plain multi-exit CNN.
///
/// Stage k is conv3x3 -> relu with a 2x spatial reduction, so an input of
/// side L yields stage features of side L / 2^k with widths[k-1] channels.
struct ModelSpec {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t classes = 10;
  Downsample downsample = Downsample::strided_conv;

  std::size_t stages() const { return widths.size(); }
  std::size_t final_width() const { return widths.back(); }
  void validate() const;

  /// "desk-cnn-4" (widths 16,32,64,128) or "desk-cnn-3" (16,32,64).
  static ModelSpec named(std::string_view name, std::size_t classes);
};

template <typename S>
struct MultiExitOutput {
  std::vector<Var<S>> logits;    // S_1..S_K, each (N, C); only S_K for Exits::final_only
  std::vector<Var<S>> features;  // F_1..F_K
};

enum class Exits { all, final_only };

template <typename S>
class InferenceModel;

/// K-stage backbone with an exit head after every early stage.
///
/// Exit head k: conv3x3 (c_k -> c_K, stride 2^(K-k)) -> relu -> global
/// average pool -> linear. The final head is global average pool -> linear.
/// Parameters are passed to forward() explicitly so callers can substitute
/// recorded values (e.g. a one-step-updated copy) for the stored ones.
template <typename S>
class MultiExitModel {
 public:
  explicit MultiExitModel(ModelSpec spec, std::uint64_t seed = 0);

  const ModelSpec& spec() const { return spec_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }

  void init_params(std::uint64_t seed) { init_kaiming(params_, seed); }

  MultiExitOutput<S> forward(std::span<const Var<S>> params, const Var<S>& x, Exits exits = Exits::all) const;

  /// Forward with the stored parameters bound as constants, no graph kept.
  std::vector<Tensor<S>> predict_logits(const Tensor<S>& x, Exits exits = Exits::all) const;

  /// Indices into parameters() that forward() reads for `exits`.
  std::vector<std::size_t> parameter_indices(Exits exits) const;

  /// Stages plus final head only; exit heads are dropped.
  InferenceModel<S> strip_for_inference() const;

  /// Throws DimensionError unless x is (N, in_channels, H, W) with H, W divisible by 2^K.
  void check_input(const Shape& x) const;

 private:
  ModelSpec spec_;
  ParameterSet<S> params_;
  std::vector<std::size_t> stage_w_, stage_b_;
  std::vector<std::size_t> exit_conv_w_, exit_conv_b_, exit_fc_w_, exit_fc_b_;
  std::size_t final_w_ = 0, final_b_ = 0;
};

/// Deployment form of a trained model: backbone and final head only.
template <typename S>
class InferenceModel {
 public:
  InferenceModel(ModelSpec spec, ParameterSet<S> params) : spec_(std::move(spec)), params_(std::move(params)) {}
  const ParameterSet<S>& parameters() const { return params_; }
  Tensor<S> predict(const Tensor<S>& x) const;

 private:
  ModelSpec spec_;
  ParameterSet<S> params_;
};

/// Bottleneck head shared by exits and generator targets:
/// conv3x3 (stride) -> relu -> global average pool -> linear.
template <typename S>
Var<S> exit_head(const Var<S>& features, const Var<S>& conv_w, const Var<S>& conv_b, const Var<S>& fc_w,
                 const Var<S>& fc_b, std::size_t stride);

/// Uniform average of per-exit tempered softmax probabilities.
template <typename S>
Tensor<S> ensemble_output(std::span<const Tensor<S>> logits, S tau = S(1));

extern template class MultiExitModel<float>;
extern template class MultiExitModel<double>;
extern template class InferenceModel<float>;
extern template class InferenceModel<double>;

}  // namespace selfboost
