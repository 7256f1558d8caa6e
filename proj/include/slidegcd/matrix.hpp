#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slidegcd/error.hpp"

namespace slidegcd {

// Dense row-major matrix. Vectors are represented as 1×n rows.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static Matrix row_vector(std::span<const T> values) {
    return Matrix(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::string shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <class U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape_str() + " x " +
                         b.shape_str());
  }
  Matrix<T> out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      if (av == T{0}) continue;
      const T* brow = &b(p, 0);
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// aᵀ·b without materialising the transpose.
template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts differ " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  Matrix<T> out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T av = a(r, i);
      if (av == T{0}) continue;
      T* orow = &out(i, 0);
      const T* brow = &b(r, 0);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a·bᵀ without materialising the transpose.
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts differ " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      T acc{0};
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      out(i, j) = acc;
    }
  }
  return out;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace slidegcd
