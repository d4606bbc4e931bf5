#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ren/errors.hpp"

namespace ren {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

// Dense row-major matrix of doubles. Rank is at most 2; vectors are 1xn.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape_{rows, cols}, values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " given " +
                           std::to_string(values_.size()) + " values");
    }
  }

  explicit Tensor(Shape shape, double fill = 0.0) : Tensor(shape.rows, shape.cols, fill) {}

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw DimensionError("ragged initializer for tensor");
      values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor(m, n, std::move(values));
  }

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
  }

  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return values_.size(); }
  const Shape& shape() const { return shape_; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return values_[i * shape_.cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * shape_.cols + j]; }
  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& storage() const { return values_; }

  std::span<double> row_span(std::size_t i) { return {values_.data() + i * shape_.cols, shape_.cols}; }
  std::span<const double> row_span(std::size_t i) const {
    return {values_.data() + i * shape_.cols, shape_.cols};
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> values_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

// Plain (graph-free) kernels shared by the autograd ops and by inference code.
namespace kernels {

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// out = a * b
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents disagree for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Tensor out(a.rows(), b.cols());
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.values().data() + i * n;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.values().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

// out = a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row extents disagree for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Tensor out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.values().data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.values().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

// out = a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column extents disagree for " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row_span(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row_span(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto in = x.row_span(i);
    auto o = out.row_span(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

inline Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: widths differ for " + to_string(top.shape()) + " and " +
                         to_string(bottom.shape()));
  }
  std::vector<double> values(top.storage());
  values.insert(values.end(), bottom.storage().begin(), bottom.storage().end());
  return Tensor(top.rows() + bottom.rows(), top.cols(), std::move(values));
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + to_string(x.shape()));
  }
  std::vector<double> values(x.storage().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
                             x.storage().begin() + static_cast<std::ptrdiff_t>(end * x.cols()));
  return Tensor(end - begin, x.cols(), std::move(values));
}

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  Tensor out(indices.size(), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = x.row_span(indices[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace kernels
}  // namespace ren
