// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace lsp {

// Dense row-major matrix of doubles. The universal numeric carrier for
// weights, gradients, subspace states, and optimizer moments.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);
  Matrix(int rows, int cols, double fill);
  Matrix(int rows, int cols, std::vector<double> data);

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);
  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Standard product with a fixed accumulation order (k innermost ascending),
// so results are bitwise reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);

// Frobenius norm of (a - b); avoids materializing the difference.
double frobenius_distance(const Matrix& a, const Matrix& b);

struct SpectralResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Largest singular value by power iteration on a^T a.
SpectralResult spectral_norm(const Matrix& a, double tol = 1e-12, int max_iter = 1000);

struct SvdResult {
  Matrix u;                 // rows x k, orthonormal columns
  std::vector<double> s;    // k singular values, non-increasing
  Matrix v;                 // cols x k, orthonormal columns
};

// Thin SVD by one-sided Jacobi. Sizes are guarded at min(rows, cols) <= 512.
SvdResult svd_thin(const Matrix& a);

// CSV persistence: one row per line, ',' separator, shortest round-trip
// formatting so save/load is an exact double round-trip.
void save_csv(const Matrix& m, std::ostream& out);
void save_csv(const Matrix& m, const std::string& path);
Matrix load_csv(std::istream& in);
Matrix load_csv(const std::string& path);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace lsp
