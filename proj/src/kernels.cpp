#include "kernels.hpp"

#include <array>
#include <cmath>

namespace selfboost::kernels {

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, const Conv2dParams& p) {
  if (input.size() != 4) throw DimensionError("conv2d input must be NCHW, got " + to_string(input));
  if (kernel.size() != 4) throw DimensionError("conv2d kernel must be OIHW, got " + to_string(kernel));
  if (kernel[2] != kernel[3]) throw DimensionError("conv2d kernel must be square, got " + to_string(kernel));
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(input) + " vs kernel " +
                         to_string(kernel));
  }
  if (p.stride < 1) throw DimensionError("conv2d stride must be >= 1");
  ConvGeometry g{};
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = kernel[0];
  g.kernel = kernel[2];
  g.params = p;
  g.out_height = conv_out_extent(g.height, g.kernel, p);
  g.out_width = conv_out_extent(g.width, g.kernel, p);
  return g;
}

namespace {

template <typename S>
RowMatrix<S> gather_output_grad(const Tensor<S>& gy, const ConvGeometry& g) {
  const std::size_t P = g.positions();
  RowMatrix<S> out(static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(g.batch * P));
  const S* src = gy.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::copy_n(src + (n * g.out_channels + o) * P, P, out.row(static_cast<Eigen::Index>(o)).data() + n * P);
    }
  }
  return out;
}

struct Tap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

std::vector<Tap> bilinear_taps(std::size_t in) {
  std::vector<Tap> taps(2 * in);
  for (std::size_t i = 0; i < 2 * in; ++i) {
    double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[i] = Tap{lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const ConvGeometry& g) {
  RowMatrix<S> cols;
  im2col(x.data().data(), g, cols);
  Eigen::Map<const RowMatrix<S>> weight(w.data().data(), static_cast<Eigen::Index>(g.out_channels),
                                        static_cast<Eigen::Index>(g.patch()));
  RowMatrix<S> y = weight * cols;
  const std::size_t P = g.positions();
  Tensor<S> out({g.batch, g.out_channels, g.out_height, g.out_width});
  S* dst = out.mutable_data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      std::copy_n(y.row(static_cast<Eigen::Index>(o)).data() + n * P, P, dst + (n * g.out_channels + o) * P);
    }
  }
  return out;
}

template <typename S>
Tensor<S> conv2d_backward_input(const Tensor<S>& gy, const Tensor<S>& w, const ConvGeometry& g) {
  RowMatrix<S> grad = gather_output_grad(gy, g);
  Eigen::Map<const RowMatrix<S>> weight(w.data().data(), static_cast<Eigen::Index>(g.out_channels),
                                        static_cast<Eigen::Index>(g.patch()));
  RowMatrix<S> cols = weight.transpose() * grad;
  Tensor<S> gx({g.batch, g.in_channels, g.height, g.width});
  col2im(cols, g, gx.mutable_data().data());
  return gx;
}

template <typename S>
Tensor<S> conv2d_backward_weight(const Tensor<S>& x, const Tensor<S>& gy, const ConvGeometry& g) {
  RowMatrix<S> grad = gather_output_grad(gy, g);
  RowMatrix<S> cols;
  im2col(x.data().data(), g, cols);
  Tensor<S> gw({g.out_channels, g.in_channels, g.kernel, g.kernel});
  Eigen::Map<RowMatrix<S>> out(gw.mutable_data().data(), static_cast<Eigen::Index>(g.out_channels),
                               static_cast<Eigen::Index>(g.patch()));
  out.noalias() = grad * cols.transpose();
  return gw;
}

template <typename S>
Tensor<S> upsample_bilinear2x(const Tensor<S>& x) {
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto rows = bilinear_taps(H), cols = bilinear_taps(W);
  Tensor<S> out({x.dim(0), x.dim(1), 2 * H, 2 * W});
  S* dst = out.mutable_data().data();
  const S* src = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const S* in = src + p * H * W;
    S* o = dst + p * 4 * H * W;
    for (std::size_t i = 0; i < 2 * H; ++i) {
      const Tap& r = rows[i];
      for (std::size_t j = 0; j < 2 * W; ++j) {
        const Tap& c = cols[j];
        const double v = r.w_lo * (c.w_lo * in[r.lo * W + c.lo] + c.w_hi * in[r.lo * W + c.hi]) +
                         r.w_hi * (c.w_lo * in[r.hi * W + c.lo] + c.w_hi * in[r.hi * W + c.hi]);
        o[i * 2 * W + j] = static_cast<S>(v);
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> upsample_bilinear2x_adjoint(const Tensor<S>& g) {
  const std::size_t planes = g.dim(0) * g.dim(1), H = g.dim(2) / 2, W = g.dim(3) / 2;
  const auto rows = bilinear_taps(H), cols = bilinear_taps(W);
  std::vector<double> acc(planes * H * W, 0.0);
  const S* src = g.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const S* in = src + p * 4 * H * W;
    double* o = acc.data() + p * H * W;
    for (std::size_t i = 0; i < 2 * H; ++i) {
      const Tap& r = rows[i];
      for (std::size_t j = 0; j < 2 * W; ++j) {
        const Tap& c = cols[j];
        const double v = in[i * 2 * W + j];
        o[r.lo * W + c.lo] += r.w_lo * c.w_lo * v;
        o[r.lo * W + c.hi] += r.w_lo * c.w_hi * v;
        o[r.hi * W + c.lo] += r.w_hi * c.w_lo * v;
        o[r.hi * W + c.hi] += r.w_hi * c.w_hi * v;
      }
    }
  }
  std::vector<S> values(acc.begin(), acc.end());
  return Tensor<S>({g.dim(0), g.dim(1), H, W}, std::move(values));
}

#define SELFBOOST_INSTANTIATE(S)                                                                    \
  template Tensor<S> conv2d_forward<S>(const Tensor<S>&, const Tensor<S>&, const ConvGeometry&);    \
  template Tensor<S> conv2d_backward_input<S>(const Tensor<S>&, const Tensor<S>&, const ConvGeometry&); \
  template Tensor<S> conv2d_backward_weight<S>(const Tensor<S>&, const Tensor<S>&, const ConvGeometry&); \
  template Tensor<S> upsample_bilinear2x<S>(const Tensor<S>&);                                      \
  template Tensor<S> upsample_bilinear2x_adjoint<S>(const Tensor<S>&);

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost::kernels
