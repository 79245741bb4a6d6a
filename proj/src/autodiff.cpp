#include "selfboost/autodiff.hpp"

#include "selfboost/ops.hpp"

namespace selfboost {

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Tensor<Scalar> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value supplied as tape leaf");
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad});
  return Var<Scalar>(this, nodes_.size() - 1);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(std::string_view op, Tensor<Scalar> value,
                                 std::vector<Var<Scalar>> parents, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("operation '" + std::string(op) + "' produced a non-finite value");
  }
  bool needs_grad = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw GraphError("operation '" + std::string(op) + "' mixes tapes");
    needs_grad = needs_grad || p.requires_grad();
  }
  Node node{op, std::move(value), {}, {}, false};
  if (recording_ && needs_grad) {
    node.parents.reserve(parents.size());
    for (const auto& p : parents) node.parents.push_back(p.id());
    node.backward = std::move(backward);
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, nodes_.size() - 1);
}

namespace {

template <typename Scalar>
class RecordingScope {
 public:
  RecordingScope(Tape<Scalar>& tape, bool on) : tape_(tape), previous_(tape.recording()) {
    tape_.set_recording(on);
  }
  ~RecordingScope() { tape_.set_recording(previous_); }

 private:
  Tape<Scalar>& tape_;
  bool previous_;
};

}  // namespace

template <typename Scalar>
std::vector<Var<Scalar>> backward(const Var<Scalar>& loss, std::span<const Var<Scalar>> leaves,
                                  bool create_graph, Unreachable policy) {
  Tape<Scalar>& tape = loss.tape();
  if (loss.value().size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  const std::size_t last = loss.id();

  std::vector<char> is_leaf(last + 1, 0);
  for (const auto& leaf : leaves) {
    if (&leaf.tape() != &tape) throw GraphError("backward: leaf recorded on a different tape");
    if (leaf.id() > last || !leaf.requires_grad()) {
      if (policy == Unreachable::zero) continue;
      throw GraphError("backward: leaf #" + std::to_string(leaf.id()) + " is not reachable from the loss");
    }
    is_leaf[leaf.id()] = 1;
  }

  // depends[i]: node i is downstream of a requested leaf.
  std::vector<char> depends(last + 1, 0);
  for (std::size_t i = 0; i <= last; ++i) {
    if (is_leaf[i]) {
      depends[i] = 1;
      continue;
    }
    for (auto p : tape.node(i).parents) {
      if (depends[p]) {
        depends[i] = 1;
        break;
      }
    }
  }
  // reaches[i]: the loss is downstream of node i.
  std::vector<char> reaches(last + 1, 0);
  reaches[last] = 1;
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!reaches[i]) continue;
    for (auto p : tape.node(i).parents) reaches[p] = 1;
  }
  for (const auto& leaf : leaves) {
    if (policy == Unreachable::error && !reaches[leaf.id()]) {
      throw GraphError("backward: leaf #" + std::to_string(leaf.id()) + " is not reachable from the loss");
    }
  }

  RecordingScope<Scalar> scope(tape, create_graph);
  std::vector<Var<Scalar>> grads(last + 1);
  grads[last] = tape.constant(Tensor<Scalar>(loss.shape(), Scalar(1)));

  for (std::size_t i = last + 1; i-- > 0;) {
    if (!grads[i] || !depends[i] || !reaches[i]) continue;
    const auto& node = tape.node(i);
    if (node.parents.empty()) continue;
    const std::vector<std::size_t> parents = node.parents;
    std::vector<Var<Scalar>> parent_grads = node.backward(grads[i], Var<Scalar>(&tape, i));
    for (std::size_t j = 0; j < parents.size(); ++j) {
      const auto p = parents[j];
      if (!depends[p] || j >= parent_grads.size() || !parent_grads[j]) continue;
      grads[p] = grads[p] ? add(grads[p], parent_grads[j]) : parent_grads[j];
    }
    if (!is_leaf[i]) grads[i] = Var<Scalar>();
  }

  std::vector<Var<Scalar>> out;
  out.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    const bool has = leaf.id() <= last && grads[leaf.id()];
    out.push_back(has ? grads[leaf.id()] : tape.constant(Tensor<Scalar>(leaf.shape())));
  }
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> gradients(const Var<Scalar>& loss, std::span<const Var<Scalar>> leaves,
                                      Unreachable policy) {
  auto vars = backward(loss, leaves, false, policy);
  std::vector<Tensor<Scalar>> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

template class Tape<float>;
template class Tape<double>;

#define SELFBOOST_INSTANTIATE(S)                                                                  \
  template std::vector<Var<S>> backward<S>(const Var<S>&, std::span<const Var<S>>, bool, Unreachable); \
  template std::vector<Tensor<S>> gradients<S>(const Var<S>&, std::span<const Var<S>>, Unreachable);

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost
