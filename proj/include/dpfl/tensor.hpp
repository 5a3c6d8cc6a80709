#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dpfl/errors.hpp"

namespace dpfl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

// Dense row-major array. Rank 0 is a scalar, rank 2 is the working shape of
// almost every kernel. The optional grad slot is only filled for tensors
// marked trainable, by Tape::backward when the tensor was bound mutably.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() : shape_{0}, elems_{} {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)), elems_(shape_numel(shape_)) {}
  Tensor(Shape shape, std::vector<T> elems)
      : shape_(std::move(shape)), elems_(std::move(elems)) {
    if (shape_numel(shape_) != elems_.size()) {
      throw DimensionError("shape " + shape_to_string(shape_) + " holds " +
                           std::to_string(shape_numel(shape_)) + " elements, got " +
                           std::to_string(elems_.size()));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> elems;
    std::size_t n_cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != n_cols) throw DimensionError("ragged matrix literal");
      elems.insert(elems.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), n_cols}, std::move(elems));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return elems_.size(); }
  // Rank 1 reads as a single row; rank 0 as 1x1.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1);
  }

  T* data() { return elems_.data(); }
  const T* data() const { return elems_.data(); }
  std::span<T> values() { return elems_; }
  std::span<const T> values() const { return elems_; }
  std::vector<T>& elems() { return elems_; }
  const std::vector<T>& elems() const { return elems_; }

  T& operator[](std::size_t i) { return elems_[i]; }
  const T& operator[](std::size_t i) const { return elems_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return elems_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return elems_[r * cols() + c];
  }
  T item() const {
    if (elems_.size() != 1) throw DimensionError("item() on non-scalar tensor");
    return elems_[0];
  }

  MatrixMap mat() { return MatrixMap(elems_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(elems_.data(), rows(), cols()); }

  bool trainable() const { return trainable_; }
  // Marking a tensor frozen also drops any gradient it was holding.
  void set_trainable(bool on) {
    trainable_ = on;
    if (!on) grad_.reset();
  }
  bool has_grad() const { return grad_.has_value(); }
  const std::vector<T>& grad() const { return grad_.value(); }
  std::vector<T>& grad_slot() {
    if (!grad_) grad_.emplace(elems_.size(), T{0});
    return *grad_;
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
  }

  bool all_finite() const {
    for (T v : elems_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < elems_.size(); ++i) out[i] = static_cast<U>(elems_[i]);
    out.set_trainable(trainable_);
    return out;
  }

  // Value equality: shape and elements, bit for bit. Grad slot ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.elems_ == b.elems_;
  }

 private:
  Shape shape_;
  std::vector<T> elems_;
  bool trainable_ = false;
  std::optional<std::vector<T>> grad_;
};

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Free kernels. Each validates shapes and throws DimensionError on mismatch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a · bᵀ, the natural product for [out x in] weight layouts.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
double l2_norm(const Tensor<T>& x);

double l2_norm(std::span<const double> x);

}  // namespace dpfl
