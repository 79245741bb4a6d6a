#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "selfboost/errors.hpp"

namespace selfboost {

/// Extents of a dense row-major array. Every extent is positive.
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense n-dimensional array with value semantics.
///
/// Storage is shared between copies and never modified in place once a
/// second owner exists; `mutable_data()` detaches before handing out a
/// writable view, so a Tensor behaves like an immutable value.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() : Tensor(Shape{1}) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape();
    data_ = std::make_shared<Storage>(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    check_shape();
    if (values.size() != numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + to_string(shape_));
    }
    data_ = std::make_shared<Storage>(values.begin(), values.end());
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, std::vector<Scalar>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }

  std::span<const Scalar> data() const { return {data_->data(), data_->size()}; }

  std::span<Scalar> mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<Storage>(*data_);
    return {data_->data(), data_->size()};
  }

  Scalar operator[](std::size_t i) const { return (*data_)[i]; }

  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  ConstArrayMap array() const { return ConstArrayMap(data_->data(), static_cast<Eigen::Index>(size())); }
  ArrayMap mutable_array() {
    auto d = mutable_data();
    return ArrayMap(d.data(), static_cast<Eigen::Index>(d.size()));
  }

  /// Same data viewed under another shape with the same element count.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    out.check_shape();
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> v(size());
    std::transform(data_->begin(), data_->end(), v.begin(), [](Scalar x) { return static_cast<Other>(x); });
    return Tensor<Other>(shape_, std::move(v));
  }

  bool all_finite() const {
    return std::all_of(data_->begin(), data_->end(), [](Scalar x) { return std::isfinite(x); });
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && *a.data_ == *b.data_;
  }

 private:
  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
    }
  }

  // Packet-aligned so vectorized reductions split work the same way at every address.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  Shape shape_;
  std::shared_ptr<Storage> data_;
};

/// 64-bit FNV-1a over shape and raw bytes; used to prove parameters are untouched.
template <typename Scalar>
std::uint64_t checksum(const Tensor<Scalar>& t, std::uint64_t seed = 1469598103934665603ULL) {
  std::uint64_t h = seed;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto e : t.shape()) mix(reinterpret_cast<const unsigned char*>(&e), sizeof(e));
  mix(reinterpret_cast<const unsigned char*>(t.data().data()), t.size() * sizeof(Scalar));
  return h;
}

}  // namespace selfboost
