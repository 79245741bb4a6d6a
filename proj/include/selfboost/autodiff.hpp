#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfboost/tensor.hpp"

namespace selfboost {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
///
/// A Var is only valid while its tape has not been cleared. Copies are cheap
/// (pointer + index).
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  explicit operator bool() const { return valid(); }

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape<Scalar>& tape() const {
    if (!tape_) throw GraphError("use of an empty Var");
    return *tape_;
  }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Recording of executed operations.
///
/// Node ids grow with creation order, so the id order is a topological order.
/// Backward rules are written in terms of recorded ops themselves; running
/// them while recording yields gradients that are again differentiable,
/// which is how second-order derivatives are obtained.
template <typename Scalar>
class Tape {
 public:
  /// Returns one gradient per parent (an empty Var for "no contribution").
  using BackwardFn =
      std::function<std::vector<Var<Scalar>>(const Var<Scalar>& grad, const Var<Scalar>& self)>;

  struct Node {
    std::string_view op;
    Tensor<Scalar> value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false);
  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  /// Appends an op result. Parents and the backward rule are dropped when
  /// recording is off or no parent requires a gradient.
  Var<Scalar> record(std::string_view op, Tensor<Scalar> value,
                     std::vector<Var<Scalar>> parents, BackwardFn backward);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;
  bool recording_ = true;
};

/// Scoped switch that stops graph construction on a tape.
template <typename Scalar>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<Scalar>& tape) : tape_(tape), previous_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<Scalar>& tape_;
  bool previous_;
};

/// Reverse-mode sweep from a scalar `loss` to each of `leaves`.
///
/// With `create_graph` the returned gradients are recorded nodes that can be
/// differentiated again (w.r.t. any requires-grad node upstream). Otherwise
/// they are constants. A leaf that does not reach `loss` raises GraphError,
/// or gets a zero gradient under Unreachable::zero.
enum class Unreachable { error, zero };

template <typename Scalar>
std::vector<Var<Scalar>> backward(const Var<Scalar>& loss, std::span<const Var<Scalar>> leaves,
                                  bool create_graph = false, Unreachable policy = Unreachable::error);

/// Convenience overload returning plain tensors.
template <typename Scalar>
std::vector<Tensor<Scalar>> gradients(const Var<Scalar>& loss, std::span<const Var<Scalar>> leaves,
                                      Unreachable policy = Unreachable::error);

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return tape().node(id_).value;
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return tape().node(id_).requires_grad;
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace selfboost
