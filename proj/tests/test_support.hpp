#pragma once

// Independent reference implementations used as oracles by the test suites.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "selfboost/autodiff.hpp"
#include "selfboost/ops.hpp"

namespace testutil {

using selfboost::Shape;
using selfboost::Tensor;
using selfboost::Tape;
using selfboost::Var;

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = normal(rng);
  return t;
}

inline std::vector<double> random_simplex_row(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> p(n);
  double s = 0;
  for (auto& v : p) s += (v = u(rng));
  for (auto& v : p) v /= s;
  return p;
}

/// Direct sextuple-loop convolution, NCHW x OIHW.
inline Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, const std::vector<double>& bias,
                                 std::size_t stride, std::size_t pad) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({N, O, Ho, Wo});
  auto out = y.mutable_data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x[((n * C + c) * H + r) * W + s] * k[((o * C + c) * kh + a) * kw + b];
              }
          out[((n * O + o) * Ho + i) * Wo + j] = acc;
        }
  return y;
}

/// Central differences of a scalar function of several tensors.
inline std::vector<Tensor<double>> numeric_gradient(
    const std::function<double(const std::vector<Tensor<double>>&)>& f, std::vector<Tensor<double>> inputs,
    double h = 1e-5) {
  std::vector<Tensor<double>> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double> g(inputs[i].shape());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      inputs[i].mutable_data()[j] = x0 + h;
      const double up = f(inputs);
      inputs[i].mutable_data()[j] = x0 - h;
      const double down = f(inputs);
      inputs[i].mutable_data()[j] = x0;
      g.mutable_data()[j] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("selfboost_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
