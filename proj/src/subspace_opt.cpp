// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/subspace_opt.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lsp/common.hpp"

namespace lsp {

SubspaceOptState make_opt_state(int d, double beta1, double beta2, double eps) {
  return make_opt_state(d, d, beta1, beta2, eps);
}

SubspaceOptState make_opt_state(int rows, int cols, double beta1, double beta2, double eps) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("make_opt_state: dims must be >= 1");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("make_opt_state: betas must lie in (0, 1)");
  if (eps <= 0.0) throw std::invalid_argument("make_opt_state: eps must be positive");
  SubspaceOptState s;
  s.m = Matrix(rows, cols);
  s.v = Matrix(rows, cols);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

AdamResult adam_step(const SubspaceOptState& state, const Matrix& grad) {
  if (!grad.same_shape(state.m))
    throw std::invalid_argument("adam_step: grad dims do not match state");
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient");
  AdamResult out;
  out.state = state;
  out.state.step = state.step + 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(out.state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(out.state.step));
  out.delta = Matrix(grad.rows(), grad.cols());
  for (int r = 0; r < grad.rows(); ++r)
    for (int c = 0; c < grad.cols(); ++c) {
      const double g = grad(r, c);
      const double m = b1 * state.m(r, c) + (1.0 - b1) * g;
      const double v = b2 * state.v(r, c) + (1.0 - b2) * g * g;
      out.state.m(r, c) = m;
      out.state.v(r, c) = v;
      out.delta(r, c) = (m / corr1) / (std::sqrt(v / corr2) + state.eps);
    }
  return out;
}

Matrix projector_gram(const SparseProjector& a, const SparseProjector& b) {
  if (a.n_rows != b.n_rows)
    throw std::invalid_argument("projector_gram: row spaces differ");
  Matrix out(a.d, b.d);
  for (int row = 0; row < a.n_rows; ++row)
    for (int ka = 0; ka < a.r; ++ka) {
      const double va = a.val(row, ka);
      double* orow = out.row(a.pos(row, ka));
      for (int kb = 0; kb < b.r; ++kb) orow[b.pos(row, kb)] += va * b.val(row, kb);
    }
  return out;
}

SubspaceOptState reproject_state(const SubspaceOptState& state, const ProjectorPair& old_pair,
                                 const ProjectorPair& new_pair, TransferKind kind) {
  if (old_pair.p.d != new_pair.p.d || old_pair.q.d != new_pair.q.d)
    throw std::invalid_argument("reproject_state: subspace widths differ");
  if (old_pair.p.n_rows != new_pair.p.n_rows || old_pair.q.n_rows != new_pair.q.n_rows)
    throw std::invalid_argument("reproject_state: weight dims differ");
  if (state.m.rows() != old_pair.p.d || state.m.cols() != old_pair.q.d)
    throw std::invalid_argument("reproject_state: state dims do not match pair");

  const Matrix tp = projector_gram(new_pair.p, old_pair.p);   // P_new^T P_old
  const Matrix tq = projector_gram(old_pair.q, new_pair.q);   // Q_old^T Q_new
  SubspaceOptState out = state;
  out.m = matmul(matmul(tp, state.m), tq);
  Matrix tp2 = tp;
  Matrix tq2 = tq;
  if (kind == TransferKind::kEntrywiseSquare) {
    for (int r = 0; r < tp2.rows(); ++r)
      for (int c = 0; c < tp2.cols(); ++c) tp2(r, c) *= tp2(r, c);
    for (int r = 0; r < tq2.rows(); ++r)
      for (int c = 0; c < tq2.cols(); ++c) tq2(r, c) *= tq2(r, c);
  } else {
    tp2 = matmul(tp, tp);
    tq2 = matmul(tq, tq);
  }
  out.v = matmul(matmul(tp2, state.v), tq2);
  for (int r = 0; r < out.v.rows(); ++r)
    for (int c = 0; c < out.v.cols(); ++c)
      if (out.v(r, c) < 0.0) out.v(r, c) = 0.0;
  return out;
}

void save_opt_state(const SubspaceOptState& s, std::ostream& out) {
  out << s.step << ' ' << format_double(s.beta1) << ' ' << format_double(s.beta2) << ' '
      << format_double(s.eps) << ' ' << s.m.rows() << ' ' << s.m.cols() << '\n';
  save_csv(s.m, out);
  save_csv(s.v, out);
}

SubspaceOptState load_opt_state(std::istream& in) {
  SubspaceOptState s;
  int rows = 0, cols = 0;
  std::string header;
  if (!std::getline(in, header)) throw IoError("load_opt_state: missing header");
  std::istringstream h(header);
  if (!(h >> s.step >> s.beta1 >> s.beta2 >> s.eps >> rows >> cols))
    throw IoError("load_opt_state: bad header");
  if (rows < 1 || cols < 1) throw IoError("load_opt_state: bad dimensions");
  std::string body;
  std::string line;
  for (int i = 0; i < 2 * rows && std::getline(in, line); ++i) body += line + "\n";
  std::istringstream b(body);
  std::string m_part, v_part;
  {
    std::istringstream split(body);
    for (int i = 0; i < rows; ++i) {
      if (!std::getline(split, line)) throw IoError("load_opt_state: truncated M");
      m_part += line + "\n";
    }
    for (int i = 0; i < rows; ++i) {
      if (!std::getline(split, line)) throw IoError("load_opt_state: truncated V");
      v_part += line + "\n";
    }
  }
  std::istringstream ms(m_part), vs(v_part);
  s.m = load_csv(ms);
  s.v = load_csv(vs);
  if (s.m.rows() != rows || s.m.cols() != cols || !s.m.same_shape(s.v))
    throw IoError("load_opt_state: matrix dims disagree with header");
  for (int r = 0; r < s.v.rows(); ++r)
    for (int c = 0; c < s.v.cols(); ++c)
      if (s.v(r, c) < 0.0) throw IoError("load_opt_state: negative second moment");
  return s;
}

}  // namespace lsp
