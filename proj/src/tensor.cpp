#include "dpfl/tensor.hpp"

#include <algorithm>

namespace dpfl {

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner extents differ: " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  Tensor<T> out(Shape{a.rows(), b.cols()});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt inner extents differ: " +
                         shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()) + "^T");
  }
  Tensor<T> out(Shape{a.rows(), b.rows()});
  out.mat().noalias() = a.mat() * b.mat().transpose();
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (!x.all_finite()) throw NumericError("softmax_rows on non-finite input");
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * n;
    T* o = out.data() + r * n;
    T mx = *std::max_element(in, in + n);
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= sum;
  }
  return out;
}

template <typename T>
double l2_norm(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

double l2_norm(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc);
}

template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> matmul_nt(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul_nt(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> softmax_rows(const Tensor<float>&);
template Tensor<double> softmax_rows(const Tensor<double>&);
template double l2_norm(const Tensor<float>&);
template double l2_norm(const Tensor<double>&);

}  // namespace dpfl
