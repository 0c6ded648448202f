#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cajnet/error.hpp"

namespace cajnet {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Class labels, 0-based.
using Labels = std::vector<int>;

/// Dense row-major matrix of finite doubles.
///
/// Every constructor rejects NaN and infinite entries, so a Matrix obtained
/// from any factory holds finite data. Element writes through operator() are
/// unchecked.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw shape_error("matrix data length " + std::to_string(data_.size()) + " does not match " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    check_finite();
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw shape_error("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    check_finite();
  }

  template <typename Derived>
  static Matrix from_eigen(const Eigen::MatrixBase<Derived>& m) {
    Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    out.eigen() = m;
    out.check_finite();
    return out;
  }

  static Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Eigen::Map<const RowMajorMatrix> eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<RowMajorMatrix> eigen() {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  Matrix transpose() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_finite() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw data_error("non-finite matrix entry at row " + std::to_string(i / std::max<std::size_t>(cols_, 1)) +
                         ", col " + std::to_string(i % std::max<std::size_t>(cols_, 1)));
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * v[k];
  return s;
}

/// Euclidean distance between two equal-length vectors, direct form.
inline double l2_distance(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double d = u[k] - v[k];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double l2_norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

/// Squared Euclidean distances between every row of a and every row of b.
///
/// Identical rows give exactly 0, and swapping the arguments yields the exact
/// transpose.
inline Matrix pairwise_sq_l2(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw shape_error("pairwise distance: column mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  Matrix out(a.rows(), b.rows());
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        sq += diff * diff;
      }
      out(i, j) = sq;
    }
  }
  return out;
}

inline Matrix pairwise_l2(const Matrix& a, const Matrix& b) {
  Matrix out = pairwise_sq_l2(a, b);
  for (double& v : out.data()) v = std::sqrt(v);
  return out;
}

/// Per-class row means. Row c is the mean of the rows of `x` labelled c.
inline Matrix class_means(const Matrix& x, const Labels& y, std::size_t num_classes) {
  if (y.size() != x.rows()) {
    throw shape_error("class_means: " + std::to_string(y.size()) + " labels for " + std::to_string(x.rows()) + " rows");
  }
  Matrix sums(num_classes, x.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int label = y[i];
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw data_error("class_means: label " + std::to_string(label) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    auto dst = sums.row(static_cast<std::size_t>(label));
    const auto src = x.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) dst[k] += src[k];
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw data_error("class_means: class " + std::to_string(c) + " has no samples");
    for (double& v : sums.row(c)) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

inline std::vector<double> column_means(const Matrix& x) {
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) mean[k] += r[k];
  }
  for (double& v : mean) v /= static_cast<double>(x.rows());
  return mean;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw shape_error("matmul: " + shape_string(a) + " times " + shape_string(b));
  return Matrix::from_eigen(a.eigen() * b.eigen());
}

/// [a | b], side by side.
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw shape_error("hconcat: row mismatch " + shape_string(a) + " vs " + shape_string(b));
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

/// a stacked on top of b.
inline Matrix vconcat(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw shape_error("vconcat: column mismatch " + shape_string(a) + " vs " + shape_string(b));
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return {a.rows() + b.rows(), a.cols(), std::move(data)};
}

inline Matrix select_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  return out;
}

inline constexpr double kSingularPivot = 1e-12;

/// Solves a x = b by LU with partial pivoting.
///
/// Throws a numerical error when any pivot of the factorization falls below
/// 1e-12 in magnitude.
inline Matrix solve_linear(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols()) throw shape_error("solve_linear: matrix is not square (" + shape_string(a) + ")");
  if (b.rows() != a.rows()) throw shape_error("solve_linear: rhs " + shape_string(b) + " for " + shape_string(a));
  const Eigen::MatrixXd dense = a.eigen();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(dense);
  const auto& factors = lu.matrixLU();
  for (Eigen::Index i = 0; i < factors.rows(); ++i) {
    if (std::abs(factors(i, i)) < kSingularPivot) {
      throw numerical_error("solve_linear: singular matrix (pivot " + std::to_string(i) + " below 1e-12)");
    }
  }
  const Eigen::MatrixXd rhs = b.eigen();
  return Matrix::from_eigen(lu.solve(rhs));
}

}  // namespace cajnet
