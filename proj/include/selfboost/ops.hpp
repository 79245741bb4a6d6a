#pragma once

#include "selfboost/autodiff.hpp"

namespace selfboost {

/// Geometry of a square-kernel 2-D convolution.
struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a convolution along one spatial axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const Conv2dParams& p);

// Differentiable op suite. Shapes are never broadcast implicitly: binary
// elementwise ops require equal shapes and the explicit broadcast helpers
// below say which axis they expand.

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> neg(const Var<S>& a);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> exp(const Var<S>& a);
template <typename S> Var<S> log(const Var<S>& a);
template <typename S> Var<S> reciprocal(const Var<S>& a);
/// max(x, 0); the subgradient at 0 is 0.
template <typename S> Var<S> relu(const Var<S>& a);
/// max(x, lo); the gradient is passed only where x > lo.
template <typename S> Var<S> clamp_min(const Var<S>& a, S lo);

/// Sum of all elements, shape (1).
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
/// Expands a one-element tensor to `shape`.
template <typename S> Var<S> broadcast_scalar(const Var<S>& s, const Shape& shape);
/// Same elements under another shape.
template <typename S> Var<S> reshape(const Var<S>& a, const Shape& shape);
/// (N, C) -> (N): per-row sum.
template <typename S> Var<S> sum_rows(const Var<S>& a);
/// (N) -> (N, C): repeat each entry along a new trailing axis.
template <typename S> Var<S> expand_rows(const Var<S>& v, std::size_t cols);

/// Matrix product of rank-2 tensors, optionally transposing either side.
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool transpose_a = false, bool transpose_b = false);
/// x (N, in) * W(out, in)^T + b(out).
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);

/// Adds b (C) along axis 1 of x (N, C, ...).
template <typename S> Var<S> add_channel_bias(const Var<S>& x, const Var<S>& b);
/// Sums x (N, C, ...) over every axis but 1, giving (C).
template <typename S> Var<S> reduce_channels(const Var<S>& x);
/// Expands b (C) to `shape`, placing it along axis 1.
template <typename S> Var<S> broadcast_channels(const Var<S>& b, const Shape& shape);

/// x (N, C, H, W) with kernel (O, C, k, k) -> (N, O, H', W').
template <typename S> Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Conv2dParams& p);
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, const Conv2dParams& p);
/// Adjoint of conv2d w.r.t. its input: maps an output gradient back to `input_shape`.
template <typename S>
Var<S> conv2d_input_grad(const Var<S>& grad_out, const Var<S>& kernel, const Shape& input_shape,
                         const Conv2dParams& p);
/// Adjoint of conv2d w.r.t. its kernel.
template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& grad_out, const Shape& kernel_shape,
                          const Conv2dParams& p);

/// Bilinear 2x upsampling with half-pixel centres: output index i samples
/// input coordinate (i + 0.5) / 2 - 0.5, clamped to the valid range.
template <typename S> Var<S> upsample_bilinear2x(const Var<S>& x);
/// Transpose of upsample_bilinear2x; halves H and W.
template <typename S> Var<S> upsample_bilinear2x_adjoint(const Var<S>& g);

/// Mean over non-overlapping 2x2 windows. H and W must be even.
template <typename S> Var<S> avg_pool2x(const Var<S>& x);
template <typename S> Var<S> avg_pool2x_adjoint(const Var<S>& g);

/// (N, C, H, W) -> (N, C).
template <typename S> Var<S> global_avg_pool(const Var<S>& x);
template <typename S>
Var<S> global_avg_pool_adjoint(const Var<S>& g, std::size_t height, std::size_t width);

/// Row-wise log-softmax of (N, C) logits, max-shifted.
template <typename S> Var<S> log_softmax(const Var<S>& z);
template <typename S> Var<S> softmax(const Var<S>& z);
/// softmax(z / tau). Throws ParameterError for tau <= 0.
template <typename S> Var<S> softmax_tempered(const Var<S>& z, S tau);
template <typename S> Var<S> log_softmax_tempered(const Var<S>& z, S tau);

/// Constant copy of `a` cut off from the graph.
template <typename S> Var<S> detach(const Var<S>& a);

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a) { return neg(a); }
template <typename S> Var<S> operator*(S c, const Var<S>& a) { return scale(a, c); }

/// Plain-tensor helpers that do not touch a tape.
template <typename S> Tensor<S> softmax_rows(const Tensor<S>& z, S tau = S(1));

}  // namespace selfboost
