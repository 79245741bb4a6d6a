#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "selfboost/parameters.hpp"

namespace selfboost {

/// Step schedule: lr(e) = base * factor^(number of milestones <= e), e counted from 0.
struct StepSchedule {
  double base = 0.1;
  std::vector<std::size_t> milestones{80, 140};
  double factor = 0.1;

  double at(std::size_t epoch) const {
    double lr = base;
    for (auto m : milestones)
      if (m <= epoch) lr *= factor;
    return lr;
  }
};

namespace detail {

template <typename S>
void check_grads(const ParameterSet<S>& params, std::span<const Tensor<S>> grads) {
  if (grads.size() != params.size()) throw DimensionError("optimizer: gradient count does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw DimensionError("optimizer: gradient for '" + params[i].name + "' has shape " +
                           to_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("optimizer: non-finite gradient for '" + params[i].name + "'");
  }
}

template <typename S>
std::uint64_t checksum_all(const std::vector<Tensor<S>>& buffers) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& b : buffers) h = checksum(b, h);
  return h;
}

}  // namespace detail

/// SGD with heavy-ball momentum and L2 weight decay:
///   d = g + wd * w;  v = mu * v + d;  w -= lr * v
template <typename S>
class SgdMomentum {
 public:
  SgdMomentum(const ParameterSet<S>& params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params) velocity_.emplace_back(p.value.shape());
  }

  /// With `only` set, the remaining parameters and their buffers are left untouched.
  void step(ParameterSet<S>& params, std::span<const Tensor<S>> grads, double lr,
            std::span<const std::size_t> only = {}) {
    detail::check_grads(params, grads);
    const S mu = static_cast<S>(momentum_), wd = static_cast<S>(weight_decay_), rate = static_cast<S>(lr);
    std::vector<std::size_t> all;
    if (only.empty()) {
      all.resize(grads.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      only = all;
    }
    for (std::size_t i : only) {
      auto w = params[i].value.mutable_array();
      auto v = velocity_[i].mutable_array();
      v = mu * v + grads[i].array() + wd * w;
      w -= rate * v;
    }
  }

  const std::vector<Tensor<S>>& velocity() const { return velocity_; }
  std::uint64_t checksum() const { return detail::checksum_all(velocity_); }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<S>> velocity_;
};

/// Adaptive-moment optimizer with bias correction.
template <typename S>
class Adam {
 public:
  explicit Adam(const ParameterSet<S>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      first_.emplace_back(p.value.shape());
      second_.emplace_back(p.value.shape());
    }
  }

  void step(ParameterSet<S>& params, std::span<const Tensor<S>> grads, double lr) {
    detail::check_grads(params, grads);
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S step = static_cast<S>(lr / c1), root_c2 = static_cast<S>(std::sqrt(c2)), eps = static_cast<S>(eps_);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto m = first_[i].mutable_array();
      auto v = second_[i].mutable_array();
      const auto g = grads[i].array();
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g * g;
      params[i].value.mutable_array() -= step * m / (v.sqrt() / root_c2 + eps);
    }
  }

  std::size_t steps() const { return steps_; }
  std::uint64_t checksum() const { return detail::checksum_all(first_) ^ (detail::checksum_all(second_) * 31); }

 private:
  double beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
  std::vector<Tensor<S>> first_, second_;
};

}  // namespace selfboost
