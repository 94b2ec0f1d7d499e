// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmtlab/error.hpp"

namespace mmtlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. Rank 0 is a scalar, rank 2 is [rows x cols].
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(values_.size()) + " values for shape " +
                       shape_string(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor(Shape{rows, cols}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_.front(); }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  T item() const {
    if (values_.size() != 1) throw ShapeError("Tensor::item on non-scalar " + shape_string(shape_));
    return values_.front();
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool all_finite() const {
    for (const T v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
  bool requires_grad_ = false;
};

}  // namespace mmtlab
