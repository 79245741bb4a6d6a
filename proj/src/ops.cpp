#include "selfboost/ops.hpp"

#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace selfboost {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, const Conv2dParams& p) {
  if (p.stride < 1) throw DimensionError("conv2d stride must be >= 1");
  if (in + 2 * p.padding < kernel) {
    throw DimensionError("conv2d kernel " + std::to_string(kernel) + " larger than padded extent " +
                         std::to_string(in + 2 * p.padding));
  }
  return (in + 2 * p.padding - kernel) / p.stride + 1;
}

namespace {

template <typename S>
using Vars = std::vector<Var<S>>;

template <typename S>
Tape<S>& common_tape(const Var<S>& a, const Var<S>& b) {
  if (&a.tape() != &b.tape()) throw GraphError("operands live on different tapes");
  return a.tape();
}

template <typename S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <typename S>
void require_rank(const char* op, const Var<S>& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(a.shape()));
  }
}

template <typename S>
Tensor<S> mask_where(const Tensor<S>& x, S threshold) {
  Tensor<S> m(x.shape());
  m.mutable_array() = (x.array() > threshold).template cast<S>();
  return m;
}

/// Number of elements per (n, c) slot of an (N, C, ...) tensor.
std::size_t inner_extent(const Shape& shape) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  return inner;
}

}  // namespace

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  auto& tape = common_tape(a, b);
  require_same_shape("add", a, b);
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array() + b.value().array();
  return tape.record("add", std::move(out), {a, b},
                     [](const Var<S>& g, const Var<S>&) { return Vars<S>{g, g}; });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  auto& tape = common_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array() - b.value().array();
  return tape.record("sub", std::move(out), {a, b},
                     [](const Var<S>& g, const Var<S>&) { return Vars<S>{g, neg(g)}; });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  auto& tape = common_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array() * b.value().array();
  return tape.record("mul", std::move(out), {a, b}, [a, b](const Var<S>& g, const Var<S>&) {
    return Vars<S>{mul(g, b), mul(g, a)};
  });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.mutable_array() = -a.value().array();
  return a.tape().record("neg", std::move(out), {a},
                         [](const Var<S>& g, const Var<S>&) { return Vars<S>{neg(g)}; });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array() * factor;
  return a.tape().record("scale", std::move(out), {a}, [factor](const Var<S>& g, const Var<S>&) {
    return Vars<S>{scale(g, factor)};
  });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array().exp();
  return a.tape().record("exp", std::move(out), {a},
                         [](const Var<S>& g, const Var<S>& self) { return Vars<S>{mul(g, self)}; });
}

template <typename S>
Var<S> log(const Var<S>& a) {
  if ((a.value().array() <= S(0)).any()) throw NumericError("log of a non-positive value");
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array().log();
  return a.tape().record("log", std::move(out), {a}, [a](const Var<S>& g, const Var<S>&) {
    return Vars<S>{mul(g, reciprocal(a))};
  });
}

template <typename S>
Var<S> reciprocal(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array().inverse();
  return a.tape().record("reciprocal", std::move(out), {a}, [](const Var<S>& g, const Var<S>& self) {
    return Vars<S>{neg(mul(g, mul(self, self)))};
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array().max(S(0));
  return a.tape().record("relu", std::move(out), {a}, [a](const Var<S>& g, const Var<S>&) {
    return Vars<S>{mul(g, g.tape().constant(mask_where(a.value(), S(0))))};
  });
}

template <typename S>
Var<S> clamp_min(const Var<S>& a, S lo) {
  Tensor<S> out(a.shape());
  out.mutable_array() = a.value().array().max(lo);
  return a.tape().record("clamp_min", std::move(out), {a}, [a, lo](const Var<S>& g, const Var<S>&) {
    return Vars<S>{mul(g, g.tape().constant(mask_where(a.value(), lo)))};
  });
}

template <typename S>
Var<S> sum(const Var<S>& a) {
  const Shape shape = a.shape();
  return a.tape().record("sum", Tensor<S>::scalar(a.value().array().sum()), {a},
                         [shape](const Var<S>& g, const Var<S>&) {
                           return Vars<S>{broadcast_scalar(g, shape)};
                         });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

template <typename S>
Var<S> broadcast_scalar(const Var<S>& s, const Shape& shape) {
  if (s.value().size() != 1) throw DimensionError("broadcast_scalar needs a one-element tensor");
  const Shape from = s.shape();
  return s.tape().record("broadcast_scalar", Tensor<S>(shape, s.value()[0]), {s},
                         [from](const Var<S>& g, const Var<S>&) { return Vars<S>{reshape(sum(g), from)}; });
}

template <typename S>
Var<S> reshape(const Var<S>& a, const Shape& shape) {
  const Shape from = a.shape();
  if (from == shape) return a;
  return a.tape().record("reshape", a.value().reshaped(shape), {a},
                         [from](const Var<S>& g, const Var<S>&) { return Vars<S>{reshape(g, from)}; });
}

template <typename S>
Var<S> sum_rows(const Var<S>& a) {
  require_rank("sum_rows", a, 2);
  const std::size_t n = a.shape()[0], c = a.shape()[1];
  Tensor<S> out({n});
  Eigen::Map<const kernels::RowMatrix<S>> m(a.value().data().data(), static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(c));
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(out.mutable_data().data(), static_cast<Eigen::Index>(n)) =
      m.rowwise().sum();
  return a.tape().record("sum_rows", std::move(out), {a}, [c](const Var<S>& g, const Var<S>&) {
    return Vars<S>{expand_rows(g, c)};
  });
}

template <typename S>
Var<S> expand_rows(const Var<S>& v, std::size_t cols) {
  require_rank("expand_rows", v, 1);
  const std::size_t n = v.shape()[0];
  Tensor<S> out({n, cols});
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) std::fill_n(d.data() + i * cols, cols, v.value()[i]);
  return v.tape().record("expand_rows", std::move(out), {v},
                         [](const Var<S>& g, const Var<S>&) { return Vars<S>{sum_rows(g)}; });
}

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool transpose_a, bool transpose_b) {
  auto& tape = common_tape(a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  using M = kernels::RowMatrix<S>;
  Eigen::Map<const M> A(a.value().data().data(), static_cast<Eigen::Index>(a.shape()[0]),
                        static_cast<Eigen::Index>(a.shape()[1]));
  Eigen::Map<const M> B(b.value().data().data(), static_cast<Eigen::Index>(b.shape()[0]),
                        static_cast<Eigen::Index>(b.shape()[1]));
  const std::size_t rows = transpose_a ? a.shape()[1] : a.shape()[0];
  const std::size_t inner_a = transpose_a ? a.shape()[0] : a.shape()[1];
  const std::size_t inner_b = transpose_b ? b.shape()[1] : b.shape()[0];
  const std::size_t cols = transpose_b ? b.shape()[0] : b.shape()[1];
  if (inner_a != inner_b) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<S> out({rows, cols});
  Eigen::Map<M> C(out.mutable_data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!transpose_a && !transpose_b) C.noalias() = A * B;
  if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
  if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
  if (transpose_a && transpose_b) C.noalias() = A.transpose() * B.transpose();
  return tape.record("matmul", std::move(out), {a, b},
                     [a, b, transpose_a, transpose_b](const Var<S>& g, const Var<S>&) {
                       if (!transpose_a && !transpose_b) return Vars<S>{matmul(g, b, false, true), matmul(a, g, true, false)};
                       if (!transpose_a && transpose_b) return Vars<S>{matmul(g, b, false, false), matmul(g, a, true, false)};
                       if (transpose_a && !transpose_b) return Vars<S>{matmul(b, g, false, true), matmul(a, g, false, false)};
                       return Vars<S>{matmul(b, g, true, true), matmul(g, a, true, true)};
                     });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  return add_channel_bias(matmul(x, weight, false, true), bias);
}

template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& b) {
  auto& tape = common_tape(x, b);
  if (x.shape().size() < 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1]) {
    throw DimensionError("add_channel_bias: " + to_string(x.shape()) + " with bias " + to_string(b.shape()));
  }
  const std::size_t n = x.shape()[0], c = x.shape()[1], inner = inner_extent(x.shape());
  Tensor<S> out = x.value();
  auto d = out.mutable_data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      S* p = d.data() + (i * c + k) * inner;
      for (std::size_t r = 0; r < inner; ++r) p[r] += bv[k];
    }
  return tape.record("add_channel_bias", std::move(out), {x, b},
                     [](const Var<S>& g, const Var<S>&) { return Vars<S>{g, reduce_channels(g)}; });
}

template <typename S>
Var<S> reduce_channels(const Var<S>& x) {
  if (x.shape().size() < 2) throw DimensionError("reduce_channels needs rank >= 2");
  const std::size_t n = x.shape()[0], c = x.shape()[1], inner = inner_extent(x.shape());
  std::vector<S> acc(c, S(0));
  const auto d = x.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const S* p = d.data() + (i * c + k) * inner;
      S s = 0;
      for (std::size_t r = 0; r < inner; ++r) s += p[r];
      acc[k] += s;
    }
  const Shape shape = x.shape();
  return x.tape().record("reduce_channels", Tensor<S>({c}, std::move(acc)), {x},
                         [shape](const Var<S>& g, const Var<S>&) {
                           return Vars<S>{broadcast_channels(g, shape)};
                         });
}

template <typename S>
Var<S> broadcast_channels(const Var<S>& b, const Shape& shape) {
  if (shape.size() < 2 || b.shape().size() != 1 || b.shape()[0] != shape[1]) {
    throw DimensionError("broadcast_channels: bias " + to_string(b.shape()) + " to " + to_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1], inner = inner_extent(shape);
  Tensor<S> out(shape);
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) std::fill_n(d.data() + (i * c + k) * inner, inner, b.value()[k]);
  return b.tape().record("broadcast_channels", std::move(out), {b},
                         [](const Var<S>& g, const Var<S>&) { return Vars<S>{reduce_channels(g)}; });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Conv2dParams& p) {
  auto& tape = common_tape(x, kernel);
  const auto geo = kernels::conv_geometry(x.shape(), kernel.shape(), p);
  return tape.record("conv2d", kernels::conv2d_forward(x.value(), kernel.value(), geo), {x, kernel},
                     [x, kernel, p](const Var<S>& g, const Var<S>&) {
                       return Vars<S>{conv2d_input_grad(g, kernel, x.shape(), p),
                                      conv2d_weight_grad(x, g, kernel.shape(), p)};
                     });
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias, const Conv2dParams& p) {
  return add_channel_bias(conv2d(x, kernel, p), bias);
}

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& grad_out, const Var<S>& kernel, const Shape& input_shape,
                         const Conv2dParams& p) {
  auto& tape = common_tape(grad_out, kernel);
  const auto geo = kernels::conv_geometry(input_shape, kernel.shape(), p);
  const Shape expected{geo.batch, geo.out_channels, geo.out_height, geo.out_width};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv2d_input_grad: gradient " + to_string(grad_out.shape()) + ", expected " +
                         to_string(expected));
  }
  return tape.record("conv2d_input_grad", kernels::conv2d_backward_input(grad_out.value(), kernel.value(), geo),
                     {grad_out, kernel}, [grad_out, kernel, p](const Var<S>& u, const Var<S>&) {
                       return Vars<S>{conv2d(u, kernel, p), conv2d_weight_grad(u, grad_out, kernel.shape(), p)};
                     });
}

template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& grad_out, const Shape& kernel_shape,
                          const Conv2dParams& p) {
  auto& tape = common_tape(x, grad_out);
  const auto geo = kernels::conv_geometry(x.shape(), kernel_shape, p);
  const Shape expected{geo.batch, geo.out_channels, geo.out_height, geo.out_width};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv2d_weight_grad: gradient " + to_string(grad_out.shape()) + ", expected " +
                         to_string(expected));
  }
  return tape.record("conv2d_weight_grad", kernels::conv2d_backward_weight(x.value(), grad_out.value(), geo),
                     {x, grad_out}, [x, grad_out, p](const Var<S>& u, const Var<S>&) {
                       return Vars<S>{conv2d_input_grad(grad_out, u, x.shape(), p), conv2d(x, u, p)};
                     });
}

template <typename S>
Var<S> upsample_bilinear2x(const Var<S>& x) {
  require_rank("upsample_bilinear2x", x, 4);
  return x.tape().record("upsample_bilinear2x", kernels::upsample_bilinear2x(x.value()), {x},
                         [](const Var<S>& g, const Var<S>&) { return Vars<S>{upsample_bilinear2x_adjoint(g)}; });
}

template <typename S>
Var<S> upsample_bilinear2x_adjoint(const Var<S>& g) {
  require_rank("upsample_bilinear2x_adjoint", g, 4);
  if (g.shape()[2] % 2 || g.shape()[3] % 2) {
    throw DimensionError("upsample_bilinear2x_adjoint needs even spatial extents, got " + to_string(g.shape()));
  }
  return g.tape().record("upsample_bilinear2x_adjoint", kernels::upsample_bilinear2x_adjoint(g.value()), {g},
                         [](const Var<S>& u, const Var<S>&) { return Vars<S>{upsample_bilinear2x(u)}; });
}

template <typename S>
Var<S> avg_pool2x(const Var<S>& x) {
  require_rank("avg_pool2x", x, 4);
  const auto& s = x.shape();
  if (s[2] % 2 || s[3] % 2) throw DimensionError("avg_pool2x needs even spatial extents, got " + to_string(s));
  const std::size_t planes = s[0] * s[1], H = s[2] / 2, W = s[3] / 2;
  Tensor<S> out({s[0], s[1], H, W});
  auto d = out.mutable_data();
  const auto in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const S* src = in.data() + p * 4 * H * W;
    S* dst = d.data() + p * H * W;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const S* a = src + (2 * i) * 2 * W + 2 * j;
        dst[i * W + j] = (a[0] + a[1] + a[2 * W] + a[2 * W + 1]) * S(0.25);
      }
  }
  return x.tape().record("avg_pool2x", std::move(out), {x},
                         [](const Var<S>& g, const Var<S>&) { return Vars<S>{avg_pool2x_adjoint(g)}; });
}

template <typename S>
Var<S> avg_pool2x_adjoint(const Var<S>& g) {
  require_rank("avg_pool2x_adjoint", g, 4);
  const auto& s = g.shape();
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
  Tensor<S> out({s[0], s[1], 2 * H, 2 * W});
  auto d = out.mutable_data();
  const auto in = g.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const S* src = in.data() + p * H * W;
    S* dst = d.data() + p * 4 * H * W;
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j) dst[i * 2 * W + j] = src[(i / 2) * W + j / 2] * S(0.25);
  }
  return g.tape().record("avg_pool2x_adjoint", std::move(out), {g},
                         [](const Var<S>& u, const Var<S>&) { return Vars<S>{avg_pool2x(u)}; });
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  require_rank("global_avg_pool", x, 4);
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], H = s[2], W = s[3], hw = H * W;
  Tensor<S> out({n, c});
  auto d = out.mutable_data();
  const auto in = x.value().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    S acc = 0;
    for (std::size_t r = 0; r < hw; ++r) acc += in[i * hw + r];
    d[i] = acc / static_cast<S>(hw);
  }
  return x.tape().record("global_avg_pool", std::move(out), {x}, [H, W](const Var<S>& g, const Var<S>&) {
    return Vars<S>{global_avg_pool_adjoint(g, H, W)};
  });
}

template <typename S>
Var<S> global_avg_pool_adjoint(const Var<S>& g, std::size_t height, std::size_t width) {
  require_rank("global_avg_pool_adjoint", g, 2);
  const std::size_t n = g.shape()[0], c = g.shape()[1], hw = height * width;
  Tensor<S> out({n, c, height, width});
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < n * c; ++i) std::fill_n(d.data() + i * hw, hw, g.value()[i] / static_cast<S>(hw));
  return g.tape().record("global_avg_pool_adjoint", std::move(out), {g},
                         [](const Var<S>& u, const Var<S>&) { return Vars<S>{global_avg_pool(u)}; });
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& z, S tau) {
  if (!(tau > S(0))) throw ParameterError("softmax temperature must be positive");
  if (z.rank() != 2) throw DimensionError("softmax expects (N, C) logits, got " + to_string(z.shape()));
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor<S> out(z.shape());
  auto d = out.mutable_data();
  const auto in = z.data();
  for (std::size_t i = 0; i < n; ++i) {
    const S* row = in.data() + i * c;
    S* o = d.data() + i * c;
    const S shift = *std::max_element(row, row + c);
    S total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      o[k] = std::exp((row[k] - shift) / tau);
      total += o[k];
    }
    for (std::size_t k = 0; k < c; ++k) o[k] /= total;
  }
  return out;
}

template <typename S>
Var<S> log_softmax(const Var<S>& z) {
  require_rank("log_softmax", z, 2);
  const std::size_t n = z.shape()[0], c = z.shape()[1];
  Tensor<S> out(z.shape());
  auto d = out.mutable_data();
  const auto in = z.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const S* row = in.data() + i * c;
    S* o = d.data() + i * c;
    const S shift = *std::max_element(row, row + c);
    S total = 0;
    for (std::size_t k = 0; k < c; ++k) total += std::exp(row[k] - shift);
    const S lse = shift + std::log(total);
    for (std::size_t k = 0; k < c; ++k) o[k] = row[k] - lse;
  }
  return z.tape().record("log_softmax", std::move(out), {z}, [c](const Var<S>& g, const Var<S>& self) {
    return Vars<S>{sub(g, mul(exp(self), expand_rows(sum_rows(g), c)))};
  });
}

template <typename S>
Var<S> softmax(const Var<S>& z) {
  require_rank("softmax", z, 2);
  const std::size_t c = z.shape()[1];
  return z.tape().record("softmax", softmax_rows(z.value(), S(1)), {z}, [c](const Var<S>& g, const Var<S>& self) {
    return Vars<S>{mul(self, sub(g, expand_rows(sum_rows(mul(g, self)), c)))};
  });
}

template <typename S>
Var<S> softmax_tempered(const Var<S>& z, S tau) {
  if (!(tau > S(0))) throw ParameterError("softmax temperature must be positive");
  return tau == S(1) ? softmax(z) : softmax(scale(z, S(1) / tau));
}

template <typename S>
Var<S> log_softmax_tempered(const Var<S>& z, S tau) {
  if (!(tau > S(0))) throw ParameterError("softmax temperature must be positive");
  return tau == S(1) ? log_softmax(z) : log_softmax(scale(z, S(1) / tau));
}

template <typename S>
Var<S> detach(const Var<S>& a) {
  return a.tape().constant(a.value());
}

#define SELFBOOST_INSTANTIATE(S)                                                                           \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> neg<S>(const Var<S>&);                                                                   \
  template Var<S> scale<S>(const Var<S>&, S);                                                              \
  template Var<S> exp<S>(const Var<S>&);                                                                   \
  template Var<S> log<S>(const Var<S>&);                                                                   \
  template Var<S> reciprocal<S>(const Var<S>&);                                                            \
  template Var<S> relu<S>(const Var<S>&);                                                                  \
  template Var<S> clamp_min<S>(const Var<S>&, S);                                                          \
  template Var<S> sum<S>(const Var<S>&);                                                                   \
  template Var<S> mean<S>(const Var<S>&);                                                                  \
  template Var<S> broadcast_scalar<S>(const Var<S>&, const Shape&);                                        \
  template Var<S> reshape<S>(const Var<S>&, const Shape&);                                                 \
  template Var<S> sum_rows<S>(const Var<S>&);                                                              \
  template Var<S> expand_rows<S>(const Var<S>&, std::size_t);                                              \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&, bool, bool);                                     \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                                  \
  template Var<S> add_channel_bias<S>(const Var<S>&, const Var<S>&);                                       \
  template Var<S> reduce_channels<S>(const Var<S>&);                                                       \
  template Var<S> broadcast_channels<S>(const Var<S>&, const Shape&);                                      \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Conv2dParams&);                            \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, const Conv2dParams&);             \
  template Var<S> conv2d_input_grad<S>(const Var<S>&, const Var<S>&, const Shape&, const Conv2dParams&);   \
  template Var<S> conv2d_weight_grad<S>(const Var<S>&, const Var<S>&, const Shape&, const Conv2dParams&);  \
  template Var<S> upsample_bilinear2x<S>(const Var<S>&);                                                   \
  template Var<S> upsample_bilinear2x_adjoint<S>(const Var<S>&);                                           \
  template Var<S> avg_pool2x<S>(const Var<S>&);                                                            \
  template Var<S> avg_pool2x_adjoint<S>(const Var<S>&);                                                    \
  template Var<S> global_avg_pool<S>(const Var<S>&);                                                       \
  template Var<S> global_avg_pool_adjoint<S>(const Var<S>&, std::size_t, std::size_t);                     \
  template Var<S> log_softmax<S>(const Var<S>&);                                                           \
  template Var<S> softmax<S>(const Var<S>&);                                                               \
  template Var<S> softmax_tempered<S>(const Var<S>&, S);                                                   \
  template Var<S> log_softmax_tempered<S>(const Var<S>&, S);                                               \
  template Var<S> detach<S>(const Var<S>&);                                                                \
  template Tensor<S> softmax_rows<S>(const Tensor<S>&, S);

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost
