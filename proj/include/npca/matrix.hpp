#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "npca/rng.hpp"

namespace npca {

// Dense row-major matrix of 64-bit reals. The single numeric carrier for
// data batches, parameters and rotations.
class Matrix {
 public:
  Matrix() = default;

  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(check_size(rows, cols), 0.0) {}

  Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (static_cast<std::size_t>(check_size(rows, cols)) != data_.size())
      throw std::invalid_argument("Matrix: data length does not match rows*cols");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = static_cast<int>(rows.size());
    cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    data_.reserve(static_cast<std::size_t>(rows_) * cols_);
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  static Matrix ones(int rows, int cols) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), 1.0);
    return m;
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix filled(int rows, int cols, double v) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), v);
    return m;
  }

  static Matrix gaussian(int rows, int cols, Rng& rng, double stddev = 1.0) {
    Matrix m(rows, cols);
    for (auto& x : m.data_) x = stddev * rng.normal();
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool is_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  Matrix t() const {
    Matrix r(cols_, rows_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) r(j, i) = (*this)(i, j);
    return r;
  }

  double fnorm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
  }

  // per-column mean as a 1 x cols matrix
  Matrix col_mean() const {
    Matrix m(1, cols_);
    for (int i = 0; i < rows_; ++i) {
      const double* r = row_ptr(i);
      for (int j = 0; j < cols_; ++j) m(0, j) += r[j];
    }
    for (int j = 0; j < cols_; ++j) m(0, j) /= rows_;
    return m;
  }

  // per-column biased variance as a 1 x cols matrix
  Matrix col_var() const {
    Matrix mu = col_mean();
    Matrix v(1, cols_);
    for (int i = 0; i < rows_; ++i) {
      const double* r = row_ptr(i);
      for (int j = 0; j < cols_; ++j) {
        const double d = r[j] - mu(0, j);
        v(0, j) += d * d;
      }
    }
    for (int j = 0; j < cols_; ++j) v(0, j) /= rows_;
    return v;
  }

  Matrix slice_cols(int c0, int c1) const {
    if (c0 < 0 || c1 > cols_ || c0 > c1) throw std::invalid_argument("slice_cols: bad range");
    Matrix r(rows_, c1 - c0);
    for (int i = 0; i < rows_; ++i)
      std::memcpy(r.row_ptr(i), row_ptr(i) + c0, sizeof(double) * (c1 - c0));
    return r;
  }

  Matrix slice_rows(int r0, int r1) const {
    if (r0 < 0 || r1 > rows_ || r0 > r1) throw std::invalid_argument("slice_rows: bad range");
    Matrix r(r1 - r0, cols_);
    std::memcpy(r.data_.data(), data_.data() + static_cast<std::size_t>(r0) * cols_,
                sizeof(double) * static_cast<std::size_t>(r1 - r0) * cols_);
    return r;
  }

  Matrix select_rows(const std::vector<int>& idx) const {
    Matrix r(static_cast<int>(idx.size()), cols_);
    for (int i = 0; i < r.rows_; ++i) {
      if (idx[i] < 0 || idx[i] >= rows_) throw std::invalid_argument("select_rows: index out of range");
      std::memcpy(r.row_ptr(i), row_ptr(idx[i]), sizeof(double) * cols_);
    }
    return r;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Matrix& operator*=(double c) {
    for (auto& x : data_) x *= c;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(double c, Matrix a) { return a *= c; }
  friend Matrix operator*(Matrix a, double c) { return a *= c; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  static int check_size(int rows, int cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
    return rows * cols;
  }

  void require_same_shape(const Matrix& o, const char* op) const {
    if (!same_shape(o))
      throw std::invalid_argument(std::string("Matrix ") + op + ": shape mismatch " + shape_str() + " vs " +
                                  o.shape_str());
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
  Matrix r = a;
  for (int i = 0; i < r.size(); ++i) r.data()[i] *= b.data()[i];
  return r;
}

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  Matrix c(a.rows(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    double* crow = c.row_ptr(i);
    const double* arow = a.row_ptr(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (int k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  Matrix c(a.cols(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    const double* brow = b.row_ptr(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* crow = c.row_ptr(k);
      for (int j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row count mismatch");
  Matrix r(a.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    std::memcpy(r.row_ptr(i), a.row_ptr(i), sizeof(double) * a.cols());
    std::memcpy(r.row_ptr(i) + a.cols(), b.row_ptr(i), sizeof(double) * b.cols());
  }
  return r;
}

}  // namespace npca
