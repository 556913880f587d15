// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "lsp/common.hpp"

namespace lsp {

Matrix::Matrix(int rows, int cols) : Matrix(rows, cols, 0.0) {}

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
  if (data_.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("Matrix: data length does not match rows*cols");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) throw std::invalid_argument("Matrix+=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other)) throw std::invalid_argument("Matrix-=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

double frobenius_norm(const Matrix& a) {
  double sum = 0.0;
  const double* p = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) sum += p[i] * p[i];
  return std::sqrt(sum);
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("frobenius_distance: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

SpectralResult spectral_norm(const Matrix& a, double tol, int max_iter) {
  if (tol <= 0.0) throw std::invalid_argument("spectral_norm: tol must be positive");
  SpectralResult res;
  if (a.rows() == 0 || a.cols() == 0) {
    res.converged = true;
    return res;
  }
  // Power iteration on a^T a with a deterministic start vector.
  std::vector<double> v(a.cols(), 1.0 / std::sqrt(static_cast<double>(a.cols())));
  std::vector<double> av(a.rows());
  double sigma = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (int i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      const double* arow = a.row(i);
      for (int j = 0; j < a.cols(); ++j) s += arow[j] * v[j];
      av[i] = s;
    }
    double av_norm = 0.0;
    for (double x : av) av_norm += x * x;
    av_norm = std::sqrt(av_norm);
    if (av_norm == 0.0) {
      // Start vector in the null space; perturb deterministically once,
      // or the matrix maps everything to zero.
      bool all_zero = true;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != 0.0) all_zero = false;
      if (all_zero) {
        res.value = 0.0;
        res.converged = true;
        res.iterations = it + 1;
        return res;
      }
      for (int j = 0; j < a.cols(); ++j) v[j] = (j % 2 == 0) ? 0.7 : -0.3;
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      for (double& x : v) x /= std::sqrt(n2);
      continue;
    }
    // v <- normalize(a^T (a v))
    std::vector<double> next(a.cols(), 0.0);
    for (int i = 0; i < a.rows(); ++i) {
      const double* arow = a.row(i);
      for (int j = 0; j < a.cols(); ++j) next[j] += arow[j] * av[i];
    }
    double n2 = 0.0;
    for (double x : next) n2 += x * x;
    n2 = std::sqrt(n2);
    for (double& x : next) x /= n2;
    v = std::move(next);
    const double prev = sigma;
    sigma = av_norm;
    res.iterations = it + 1;
    if (it > 0 && std::abs(sigma - prev) <= tol * std::max(sigma, 1e-300)) {
      res.converged = true;
      // One more multiply for the Rayleigh estimate with the refined vector.
      double s2 = 0.0;
      for (int i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        const double* arow = a.row(i);
        for (int j = 0; j < a.cols(); ++j) s += arow[j] * v[j];
        s2 += s * s;
      }
      res.value = std::sqrt(s2);
      return res;
    }
  }
  res.value = sigma;
  res.converged = false;
  return res;
}

namespace {

// One-sided Jacobi on the columns of g (rows >= cols assumed by caller),
// accumulating right rotations into v (cols x cols, starts as identity).
void jacobi_orthogonalize(Matrix& g, Matrix& v) {
  const int n = g.cols();
  const int m = g.rows();
  const double eps = 1e-15;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          const double gp = g(i, p), gq = g(i, q);
          app += gp * gp;
          aqq += gq * gq;
          apq += gp * gq;
        }
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double gp = g(i, p), gq = g(i, q);
          g(i, p) = c * gp - s * gq;
          g(i, q) = s * gp + c * gq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

// Fill near-null columns of u with unit vectors orthonormal to the rest so
// the factor keeps orthonormal columns even for rank-deficient input.
void complete_basis(Matrix& u, const std::vector<int>& null_cols) {
  const int m = u.rows();
  const int k = u.cols();
  for (int idx : null_cols) {
    for (int cand = 0; cand < m; ++cand) {
      std::vector<double> e(m, 0.0);
      e[cand] = 1.0;
      for (int c = 0; c < k; ++c) {
        if (c == idx) continue;
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += e[i] * u(i, c);
        for (int i = 0; i < m; ++i) e[i] -= dot * u(i, c);
      }
      double n2 = 0.0;
      for (double x : e) n2 += x * x;
      if (n2 > 1e-8) {
        const double inv = 1.0 / std::sqrt(n2);
        for (int i = 0; i < m; ++i) u(i, idx) = e[i] * inv;
        break;
      }
    }
  }
}

SvdResult svd_tall(const Matrix& a) {
  const int m = a.rows();
  const int n = a.cols();
  Matrix g = a;
  Matrix v = Matrix::identity(n);
  jacobi_orthogonalize(g, v);

  std::vector<double> s(n);
  for (int j = 0; j < n; ++j) {
    double n2 = 0.0;
    for (int i = 0; i < m; ++i) n2 += g(i, j) * g(i, j);
    s[j] = std::sqrt(n2);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return s[x] > s[y]; });

  SvdResult res;
  res.u = Matrix(m, n);
  res.v = Matrix(n, n);
  res.s.resize(n);
  const double smax = s.empty() ? 0.0 : s[order[0]];
  std::vector<int> null_cols;
  for (int j = 0; j < n; ++j) {
    const int src = order[j];
    res.s[j] = s[src];
    if (s[src] > smax * 1e-13 && s[src] > 0.0) {
      const double inv = 1.0 / s[src];
      for (int i = 0; i < m; ++i) res.u(i, j) = g(i, src) * inv;
    } else {
      res.s[j] = s[src];
      null_cols.push_back(j);
    }
    for (int i = 0; i < n; ++i) res.v(i, j) = v(i, src);
  }
  complete_basis(res.u, null_cols);
  return res;
}

}  // namespace

SvdResult svd_thin(const Matrix& a) {
  if (std::min(a.rows(), a.cols()) > 512)
    throw std::invalid_argument("svd_thin: min(rows, cols) exceeds the 512 size guard");
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("svd_thin: empty matrix");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transposed());
  SvdResult res;
  res.u = std::move(t.v);
  res.v = std::move(t.u);
  res.s = std::move(t.s);
  return res;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double: conversion failed");
  return std::string(buf, ptr);
}

void save_csv(const Matrix& m, std::ostream& out) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

void save_csv(const Matrix& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_csv: cannot open " + path);
  save_csv(m, f);
  if (!f) throw IoError("save_csv: write failed on " + path);
}

Matrix load_csv(std::istream& in) {
  std::vector<double> data;
  int rows = 0;
  int cols = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int this_cols = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      double v;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw IoError("load_csv: bad number at row " + std::to_string(rows));
      data.push_back(v);
      ++this_cols;
      p = next;
      if (p < end) {
        if (*p != ',') throw IoError("load_csv: expected ',' at row " + std::to_string(rows));
        ++p;
      }
    }
    if (cols == -1) cols = this_cols;
    else if (cols != this_cols) throw IoError("load_csv: ragged rows");
    ++rows;
  }
  if (cols <= 0) throw IoError("load_csv: empty input");
  return Matrix(rows, cols, std::move(data));
}

Matrix load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_csv: cannot open " + path);
  return load_csv(f);
}

}  // namespace lsp
