// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/projector.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "lsp/common.hpp"
#include "lsp/rng.hpp"

namespace lsp {

namespace {

void check_pair_dims(const ProjectorPair& pair) {
  if (pair.p.d != pair.q.d)
    throw std::invalid_argument("projector pair: P.d != Q.d");
}

double reg_term(const ProjectorPair& pair, const FitConfig& cfg) {
  if (cfg.reg_beta == 0.0) return 0.0;
  double psq = 0.0, qsq = 0.0;
  for (double v : pair.p.values) psq += v * v;
  for (double v : pair.q.values) qsq += v * v;
  if (cfg.reg_kind == RegKind::kSquared) return cfg.reg_beta * (psq + qsq);
  return cfg.reg_beta * (std::sqrt(psq) + std::sqrt(qsq));
}

void add_reg_gradient(const ProjectorPair& pair, const FitConfig& cfg, FitGradient* grad) {
  if (cfg.reg_beta == 0.0) return;
  if (cfg.reg_kind == RegKind::kSquared) {
    for (std::size_t i = 0; i < pair.p.values.size(); ++i)
      grad->wrt_p[i] += 2.0 * cfg.reg_beta * pair.p.values[i];
    for (std::size_t i = 0; i < pair.q.values.size(); ++i)
      grad->wrt_q[i] += 2.0 * cfg.reg_beta * pair.q.values[i];
    return;
  }
  double pn = 0.0, qn = 0.0;
  for (double v : pair.p.values) pn += v * v;
  for (double v : pair.q.values) qn += v * v;
  pn = std::sqrt(pn);
  qn = std::sqrt(qn);
  if (pn > 0.0)
    for (std::size_t i = 0; i < pair.p.values.size(); ++i)
      grad->wrt_p[i] += cfg.reg_beta * pair.p.values[i] / pn;
  if (qn > 0.0)
    for (std::size_t i = 0; i < pair.q.values.size(); ++i)
      grad->wrt_q[i] += cfg.reg_beta * pair.q.values[i] / qn;
}

void check_targets(const ProjectorPair& pair, const std::vector<Matrix>& targets) {
  if (targets.empty()) throw std::invalid_argument("fit: empty target corpus");
  for (const Matrix& g : targets) {
    if (g.rows() != pair.p.n_rows || g.cols() != pair.q.n_rows)
      throw std::invalid_argument("fit: target dims do not match projector pair");
  }
}

}  // namespace

SparseProjector init_sparse(int n_rows, int d, int r, std::uint64_t seed) {
  if (n_rows < 1 || r < 1 || r > d)
    throw std::invalid_argument("init_sparse: need n_rows >= 1 and 1 <= r <= d");
  SparseProjector p;
  p.n_rows = n_rows;
  p.d = d;
  p.r = r;
  p.positions.reserve(static_cast<std::size_t>(n_rows) * r);
  p.values.reserve(static_cast<std::size_t>(n_rows) * r);
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(r));
  for (int row = 0; row < n_rows; ++row) {
    std::vector<int> pos = rng.sample_without_replacement(d, r);
    for (int j : pos) {
      p.positions.push_back(j);
      p.values.push_back(rng.normal(0.0, stddev));
    }
  }
  return p;
}

SparseProjector identity_pattern(int n_rows) {
  SparseProjector p;
  p.n_rows = n_rows;
  p.d = n_rows;
  p.r = 1;
  p.positions.resize(n_rows);
  p.values.assign(n_rows, 1.0);
  for (int i = 0; i < n_rows; ++i) p.positions[i] = i;
  return p;
}

Matrix to_dense(const SparseProjector& p) {
  Matrix m(p.n_rows, p.d);
  for (int row = 0; row < p.n_rows; ++row)
    for (int k = 0; k < p.r; ++k) m(row, p.pos(row, k)) = p.val(row, k);
  return m;
}

Matrix left_mul(const SparseProjector& p, const Matrix& y) {
  if (y.rows() != p.d) throw std::invalid_argument("left_mul: y.rows != d");
  Matrix out(p.n_rows, y.cols());
  for (int row = 0; row < p.n_rows; ++row) {
    double* orow = out.row(row);
    for (int k = 0; k < p.r; ++k) {
      const double v = p.val(row, k);
      const double* yrow = y.row(p.pos(row, k));
      for (int c = 0; c < y.cols(); ++c) orow[c] += v * yrow[c];
    }
  }
  return out;
}

Matrix leftT_mul(const SparseProjector& p, const Matrix& x) {
  if (x.rows() != p.n_rows) throw std::invalid_argument("leftT_mul: x.rows != n_rows");
  Matrix out(p.d, x.cols());
  for (int row = 0; row < p.n_rows; ++row) {
    const double* xrow = x.row(row);
    for (int k = 0; k < p.r; ++k) {
      const double v = p.val(row, k);
      double* orow = out.row(p.pos(row, k));
      for (int c = 0; c < x.cols(); ++c) orow[c] += v * xrow[c];
    }
  }
  return out;
}

Matrix right_mul(const Matrix& x, const SparseProjector& q) {
  if (x.cols() != q.n_rows) throw std::invalid_argument("right_mul: x.cols != n_rows");
  Matrix out(x.rows(), q.d);
  for (int a = 0; a < x.rows(); ++a) {
    const double* xrow = x.row(a);
    double* orow = out.row(a);
    for (int j = 0; j < q.n_rows; ++j) {
      const double xv = xrow[j];
      if (xv == 0.0) continue;
      for (int k = 0; k < q.r; ++k) orow[q.pos(j, k)] += xv * q.val(j, k);
    }
  }
  return out;
}

Matrix rightT_mul(const Matrix& x, const SparseProjector& q) {
  if (x.cols() != q.d) throw std::invalid_argument("rightT_mul: x.cols != d");
  Matrix out(x.rows(), q.n_rows);
  for (int a = 0; a < x.rows(); ++a) {
    const double* xrow = x.row(a);
    double* orow = out.row(a);
    for (int j = 0; j < q.n_rows; ++j) {
      double s = 0.0;
      for (int k = 0; k < q.r; ++k) s += xrow[q.pos(j, k)] * q.val(j, k);
      orow[j] = s;
    }
  }
  return out;
}

Matrix compress(const ProjectorPair& pair, const Matrix& g) {
  check_pair_dims(pair);
  if (g.rows() != pair.p.n_rows || g.cols() != pair.q.n_rows)
    throw std::invalid_argument("compress: g dims do not match pair");
  return leftT_mul(pair.p, right_mul(g, pair.q));
}

Matrix decompress(const ProjectorPair& pair, const Matrix& s) {
  check_pair_dims(pair);
  if (s.rows() != pair.p.d || s.cols() != pair.q.d)
    throw std::invalid_argument("decompress: s is not d x d");
  return left_mul(pair.p, rightT_mul(s, pair.q));
}

Matrix estimation_bias(const ProjectorPair& pair, const Matrix& sigma) {
  Matrix b = decompress(pair, compress(pair, sigma));
  b -= sigma;
  return b;
}

double relative_bias(const ProjectorPair& pair, const Matrix& sigma) {
  const double denom = frobenius_norm(sigma);
  if (denom == 0.0) throw std::invalid_argument("relative_bias: zero sigma");
  return frobenius_norm(estimation_bias(pair, sigma)) / denom;
}

double fit_loss(const ProjectorPair& pair, const std::vector<Matrix>& targets,
                const FitConfig& cfg) {
  check_targets(pair, targets);
  double sum = 0.0;
  for (const Matrix& g : targets) {
    const double b = frobenius_norm(estimation_bias(pair, g));
    sum += b * b;
  }
  return sum / static_cast<double>(targets.size()) + reg_term(pair, cfg);
}

FitGradient fit_gradient(const ProjectorPair& pair, const std::vector<Matrix>& targets,
                         const FitConfig& cfg) {
  check_targets(pair, targets);
  const SparseProjector& p = pair.p;
  const SparseProjector& q = pair.q;
  Matrix grad_p(p.n_rows, p.d);
  Matrix grad_q(q.n_rows, q.d);
  const double inv_t = 1.0 / static_cast<double>(targets.size());
  for (const Matrix& g : targets) {
    // With S = PᵀGQ and B = PSQᵀ - G:
    //   dL/dP = 2 [ (BQ) Sᵀ + (GQ) Cᵀ ],  C = PᵀBQ
    //   dL/dQ = 2 [ (PᵀG)ᵀ C + (PᵀB)ᵀ S ]
    Matrix gq = right_mul(g, q);
    Matrix s = leftT_mul(p, gq);
    Matrix b = left_mul(p, rightT_mul(s, q));
    b -= g;
    Matrix bq = right_mul(b, q);
    Matrix c = leftT_mul(p, bq);
    Matrix ptg = leftT_mul(p, g);
    Matrix ptb = leftT_mul(p, b);
    Matrix gp = matmul(bq, s.transposed()) + matmul(gq, c.transposed());
    Matrix gqm = matmul(ptg.transposed(), c) + matmul(ptb.transposed(), s);
    grad_p += gp * (2.0 * inv_t);
    grad_q += gqm * (2.0 * inv_t);
  }
  FitGradient out;
  out.wrt_p.resize(p.values.size());
  out.wrt_q.resize(q.values.size());
  for (int row = 0; row < p.n_rows; ++row)
    for (int k = 0; k < p.r; ++k)
      out.wrt_p[static_cast<std::size_t>(row) * p.r + k] = grad_p(row, p.pos(row, k));
  for (int row = 0; row < q.n_rows; ++row)
    for (int k = 0; k < q.r; ++k)
      out.wrt_q[static_cast<std::size_t>(row) * q.r + k] = grad_q(row, q.pos(row, k));
  add_reg_gradient(pair, cfg, &out);
  return out;
}

namespace {

double mean_relative_bias(const ProjectorPair& pair, const std::vector<Matrix>& targets) {
  double sum = 0.0;
  int counted = 0;
  for (const Matrix& g : targets) {
    if (frobenius_norm(g) == 0.0) continue;
    sum += relative_bias(pair, g);
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

}  // namespace

std::pair<ProjectorPair, FitReport> fit(const ProjectorPair& pair0,
                                        const std::vector<Matrix>& targets,
                                        const FitConfig& cfg) {
  check_pair_dims(pair0);
  check_targets(pair0, targets);
  if (cfg.alpha <= 0.0 || cfg.alpha > 1.0)
    throw std::invalid_argument("fit: alpha must be in (0, 1]");
  if (cfg.max_steps < 1) throw std::invalid_argument("fit: max_steps must be >= 1");
  if (cfg.step_size <= 0.0) throw std::invalid_argument("fit: step_size must be positive");

  ProjectorPair pair = pair0;
  FitReport report;
  const int budget = std::min(cfg.max_steps, cfg.timeout_steps);

  double loss = fit_loss(pair, targets, cfg);
  if (!std::isfinite(loss)) throw NumericError("fit: non-finite loss at initialization");
  report.loss_curve.push_back(loss);
  report.final_rel_bias = mean_relative_bias(pair, targets);
  if (report.final_rel_bias <= cfg.alpha) {
    report.success = true;
    return {pair, report};
  }

  for (int step = 0; step < budget; ++step) {
    FitGradient grad = fit_gradient(pair, targets, cfg);
    double trial_step = cfg.step_size;
    ProjectorPair trial = pair;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      for (std::size_t i = 0; i < trial.p.values.size(); ++i)
        trial.p.values[i] = pair.p.values[i] - trial_step * grad.wrt_p[i];
      for (std::size_t i = 0; i < trial.q.values.size(); ++i)
        trial.q.values[i] = pair.q.values[i] - trial_step * grad.wrt_q[i];
      const double trial_loss = fit_loss(trial, targets, cfg);
      if (!std::isfinite(trial_loss)) {
        trial_step *= 0.5;
        continue;
      }
      if (trial_loss < loss) {
        pair = std::move(trial);
        loss = trial_loss;
        accepted = true;
        break;
      }
      trial_step *= 0.5;
    }
    if (!accepted) {
      report.stalled = true;
      break;
    }
    ++report.steps;
    report.loss_curve.push_back(loss);
    report.final_rel_bias = mean_relative_bias(pair, targets);
    if (report.final_rel_bias <= cfg.alpha) {
      report.success = true;
      return {pair, report};
    }
  }
  report.final_rel_bias = mean_relative_bias(pair, targets);
  report.success = report.final_rel_bias <= cfg.alpha;
  report.timed_out = !report.success && !report.stalled;
  return {pair, report};
}

void save_projector(const SparseProjector& p, std::ostream& out) {
  out << p.n_rows << ' ' << p.d << ' ' << p.r << '\n';
  for (int row = 0; row < p.n_rows; ++row) {
    for (int k = 0; k < p.r; ++k) {
      if (k) out << ' ';
      out << p.pos(row, k);
    }
    for (int k = 0; k < p.r; ++k) out << ' ' << format_double(p.val(row, k));
    out << '\n';
  }
}

SparseProjector load_projector(std::istream& in) {
  SparseProjector p;
  if (!(in >> p.n_rows >> p.d >> p.r))
    throw IoError("load_projector: bad header");
  if (p.n_rows < 1 || p.r < 1 || p.r > p.d)
    throw IoError("load_projector: invalid dimensions in header");
  const std::size_t count = static_cast<std::size_t>(p.n_rows) * p.r;
  p.positions.resize(count);
  p.values.resize(count);
  for (int row = 0; row < p.n_rows; ++row) {
    for (int k = 0; k < p.r; ++k) {
      int v;
      if (!(in >> v) || v < 0 || v >= p.d) throw IoError("load_projector: bad position");
      p.positions[static_cast<std::size_t>(row) * p.r + k] = v;
      if (k > 0 && p.positions[static_cast<std::size_t>(row) * p.r + k - 1] >= v)
        throw IoError("load_projector: positions not strictly ascending");
    }
    for (int k = 0; k < p.r; ++k) {
      double v;
      if (!(in >> v)) throw IoError("load_projector: bad value");
      if (!std::isfinite(v)) throw IoError("load_projector: non-finite value");
      p.values[static_cast<std::size_t>(row) * p.r + k] = v;
    }
  }
  return p;
}

}  // namespace lsp
