#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "selfboost/autodiff.hpp"

namespace selfboost {

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
};

/// Ordered, uniquely named collection of trainable tensors.
template <typename S>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<S> value) {
    if (find(name)) throw InputError("duplicate parameter name '" + name + "'");
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }

  const Tensor<S>& at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw InputError("no parameter named '" + name + "'");
    return params_[*i].value;
  }

  /// Replaces a value; the shape must not change.
  void set(const std::string& name, Tensor<S> value) {
    auto i = find(name);
    if (!i) throw InputError("no parameter named '" + name + "'");
    if (params_[*i].value.shape() != value.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + to_string(params_[*i].value.shape()) +
                           ", got " + to_string(value.shape()));
    }
    params_[*i].value = std::move(value);
  }

  /// Records every parameter as a tape leaf, in order.
  std::vector<Var<S>> bind(Tape<S>& tape, bool requires_grad) const {
    std::vector<Var<S>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape.leaf(p.value, requires_grad));
    return out;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) h = selfboost::checksum(p.value, h);
    return h;
  }

  template <typename T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<T>());
    return out;
  }

 private:
  std::vector<Parameter<S>> params_;
};

/// Fan-in scaled normal init (std = sqrt(2 / fan_in)) for rank >= 2 tensors,
/// zeros for rank-1 biases. Draws are made in double so float and double
/// sets built from the same seed agree up to rounding.
template <typename S>
void init_kaiming(ParameterSet<S>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params) {
    const auto& shape = p.value.shape();
    Tensor<S> t(shape);
    if (shape.size() >= 2) {
      const double fan_in = static_cast<double>(numel(shape) / shape[0]);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : t.mutable_data()) v = static_cast<S>(normal(rng));
    }
    p.value = std::move(t);
  }
}

}  // namespace selfboost
