// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_PROJECTOR_HPP_
#define LSP_PROJECTOR_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lsp/matrix.hpp"

namespace lsp {

// Sparse projector with a fixed number of nonzeros per row. Positions are
// chosen at initialization and never move; only the values are learned.
struct SparseProjector {
  int n_rows = 0;
  int d = 0;
  int r = 0;
  // Row-major, r entries per row. Positions within a row are distinct and
  // sorted ascending.
  std::vector<int> positions;
  std::vector<double> values;

  int pos(int row, int slot) const { return positions[static_cast<std::size_t>(row) * r + slot]; }
  double val(int row, int slot) const { return values[static_cast<std::size_t>(row) * r + slot]; }
  double& val(int row, int slot) { return values[static_cast<std::size_t>(row) * r + slot]; }
};

struct ProjectorPair {
  SparseProjector p;  // n_rows = m
  SparseProjector q;  // n_rows = n
  std::int64_t birth_step = 0;
};

enum class RegKind {
  kSquared,    // reg_beta * (|P|_F^2 + |Q|_F^2)
  kUnsquared,  // reg_beta * (|P|_F + |Q|_F)
};

struct FitConfig {
  double alpha = 0.1;
  double reg_beta = 0.0;
  double step_size = 1e-2;
  int max_steps = 500;
  int timeout_steps = 500;
  std::uint64_t seed = 0;
  RegKind reg_kind = RegKind::kSquared;
};

struct FitReport {
  std::vector<double> loss_curve;  // loss after each accepted step, index 0 = initial loss
  double final_rel_bias = 0.0;     // mean over targets of |b(G)|_F / |G|_F
  bool success = false;            // final_rel_bias <= alpha
  bool timed_out = false;          // step budget exhausted before reaching alpha
  bool stalled = false;            // line search found no descent direction
  int steps = 0;                   // accepted descent steps
};

SparseProjector init_sparse(int n_rows, int d, int r, std::uint64_t seed);

// Identity-pattern projector: position {row} with value 1 in each row.
// Requires d == n_rows; compress/decompress become exact copies.
SparseProjector identity_pattern(int n_rows);

Matrix to_dense(const SparseProjector& p);

// Sparse kernels. Dense shapes: P is n_rows x d when densified.
Matrix left_mul(const SparseProjector& p, const Matrix& y);    // P·y,   y: d x c
Matrix leftT_mul(const SparseProjector& p, const Matrix& x);   // Pᵀ·x,  x: n_rows x c
Matrix right_mul(const Matrix& x, const SparseProjector& q);   // x·Q,   x: a x n_rows
Matrix rightT_mul(const Matrix& x, const SparseProjector& q);  // x·Qᵀ,  x: a x d

Matrix compress(const ProjectorPair& pair, const Matrix& g);    // Pᵀ g Q, d x d
Matrix decompress(const ProjectorPair& pair, const Matrix& s);  // P s Qᵀ, m x n
Matrix estimation_bias(const ProjectorPair& pair, const Matrix& sigma);
double relative_bias(const ProjectorPair& pair, const Matrix& sigma);

// Gradient of the fitting loss with respect to the stored values, laid out
// like SparseProjector::values. Exposed for finite-difference verification.
struct FitGradient {
  std::vector<double> wrt_p;
  std::vector<double> wrt_q;
};
double fit_loss(const ProjectorPair& pair, const std::vector<Matrix>& targets,
                const FitConfig& cfg);
FitGradient fit_gradient(const ProjectorPair& pair, const std::vector<Matrix>& targets,
                         const FitConfig& cfg);

std::pair<ProjectorPair, FitReport> fit(const ProjectorPair& pair0,
                                        const std::vector<Matrix>& targets,
                                        const FitConfig& cfg);

void save_projector(const SparseProjector& p, std::ostream& out);
SparseProjector load_projector(std::istream& in);

}  // namespace lsp

#endif  // LSP_PROJECTOR_HPP_
