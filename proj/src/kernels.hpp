#pragma once

// Raw numeric kernels behind the differentiable ops. Inputs are assumed to be
// shape-checked by the caller.

#include <Eigen/Core>

#include "selfboost/ops.hpp"
#include "selfboost/tensor.hpp"

namespace selfboost::kernels {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t out_height, out_width;
  Conv2dParams params;

  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, const Conv2dParams& p);

/// Unrolls every receptive field into a column: (C*k*k) x (N*H'*W').
template <typename S>
void im2col(const S* x, const ConvGeometry& g, RowMatrix<S>& cols) {
  const std::size_t k = g.kernel, P = g.positions(), H = g.height, W = g.width;
  const long stride = static_cast<long>(g.params.stride), pad = static_cast<long>(g.params.padding);
  cols.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.batch * P));
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        S* row = cols.row(static_cast<Eigen::Index>((c * k + i) * k + j)).data();
        for (std::size_t n = 0; n < g.batch; ++n) {
          const S* plane = x + (n * g.in_channels + c) * H * W;
          S* dst = row + n * P;
          for (std::size_t oh = 0; oh < g.out_height; ++oh) {
            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(i);
            S* out = dst + oh * g.out_width;
            if (ih < 0 || ih >= static_cast<long>(H)) {
              std::fill(out, out + g.out_width, S(0));
              continue;
            }
            const S* src = plane + static_cast<std::size_t>(ih) * W;
            for (std::size_t ow = 0; ow < g.out_width; ++ow) {
              const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(j);
              out[ow] = (iw < 0 || iw >= static_cast<long>(W)) ? S(0) : src[iw];
            }
          }
        }
      }
    }
  }
}

/// Scatter-adds columns back into an (N, C, H, W) buffer that starts zeroed.
template <typename S>
void col2im(const RowMatrix<S>& cols, const ConvGeometry& g, S* x) {
  const std::size_t k = g.kernel, P = g.positions(), H = g.height, W = g.width;
  const long stride = static_cast<long>(g.params.stride), pad = static_cast<long>(g.params.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const S* row = cols.row(static_cast<Eigen::Index>((c * k + i) * k + j)).data();
        for (std::size_t n = 0; n < g.batch; ++n) {
          S* plane = x + (n * g.in_channels + c) * H * W;
          const S* src = row + n * P;
          for (std::size_t oh = 0; oh < g.out_height; ++oh) {
            const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(i);
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            S* dst = plane + static_cast<std::size_t>(ih) * W;
            const S* in = src + oh * g.out_width;
            for (std::size_t ow = 0; ow < g.out_width; ++ow) {
              const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(j);
              if (iw >= 0 && iw < static_cast<long>(W)) dst[iw] += in[ow];
            }
          }
        }
      }
    }
  }
}

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const ConvGeometry& g);
template <typename S>
Tensor<S> conv2d_backward_input(const Tensor<S>& gy, const Tensor<S>& w, const ConvGeometry& g);
template <typename S>
Tensor<S> conv2d_backward_weight(const Tensor<S>& x, const Tensor<S>& gy, const ConvGeometry& g);

template <typename S> Tensor<S> upsample_bilinear2x(const Tensor<S>& x);
template <typename S> Tensor<S> upsample_bilinear2x_adjoint(const Tensor<S>& g);

}  // namespace selfboost::kernels
