// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/baselines.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lsp/common.hpp"
#include "lsp/rng.hpp"
#include "lsp/subspace_opt.hpp"

namespace lsp {

namespace {

constexpr std::uint64_t kLoraTag = 0x10a4;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kDivergenceCap = 1e6;

void validate(const TrainConfig& cfg, const TaskData& task) {
  if (cfg.total_steps < 0) throw std::invalid_argument("baseline config: negative total_steps");
  if (cfg.lr <= 0.0) throw std::invalid_argument("baseline config: lr must be positive");
  if (cfg.batch_size < 1 || cfg.batch_size > task.train.inputs.rows())
    throw std::invalid_argument("baseline config: batch_size exceeds train set");
  if (cfg.check_freq < 1) throw std::invalid_argument("baseline config: check_freq must be >= 1");
}

double step_lr(const TrainConfig& cfg, int step_index) {
  if (!cfg.cosine_lr || cfg.total_steps <= 1) return cfg.lr;
  const double frac = static_cast<double>(step_index) / static_cast<double>(cfg.total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 * frac));
}

}  // namespace

GaloreProjection galore_project(const Matrix& grad, int rank) {
  if (rank < 1 || rank > std::min(grad.rows(), grad.cols()))
    throw std::invalid_argument("galore_project: rank exceeds min(m, n)");
  SvdResult svd = svd_thin(grad);
  GaloreProjection out;
  out.p = Matrix(grad.rows(), rank);
  for (int i = 0; i < grad.rows(); ++i)
    for (int j = 0; j < rank; ++j) out.p(i, j) = svd.u(i, j);
  out.compressed = matmul(out.p.transposed(), grad);
  return out;
}

double galore_relative_bias(const Matrix& p, const Matrix& g) {
  const double denom = frobenius_norm(g);
  if (denom == 0.0) throw std::invalid_argument("galore_relative_bias: zero gradient");
  Matrix approx = matmul(p, matmul(p.transposed(), g));
  return frobenius_distance(approx, g) / denom;
}

namespace {

struct FullLayer {
  SubspaceOptState opt;
};

struct LoraLayer {
  Matrix w0;
  Matrix a;  // m x rank
  Matrix b;  // n x rank
  SubspaceOptState opt_a;
  SubspaceOptState opt_b;
};

struct GaloreLayer {
  Matrix p;  // m x rank
  SubspaceOptState opt;  // rank x n
};

}  // namespace

TrainHistory train_baseline(BaselineKind kind, DenseNet& net, const TaskData& task,
                            const TrainConfig& cfg) {
  validate(cfg, task);
  const int n_layers = static_cast<int>(net.layers.size());
  const int rank = cfg.baseline_rank;
  if (kind != BaselineKind::kFull) {
    if (rank < 1) throw std::invalid_argument("baseline config: rank must be >= 1");
    for (const DenseLayer& l : net.layers)
      if (rank > std::min(l.w.rows(), l.w.cols()))
        throw std::invalid_argument("baseline config: rank exceeds a layer dimension");
  }

  TrainHistory history;
  std::vector<FullLayer> full(n_layers);
  std::vector<LoraLayer> lora(n_layers);
  std::vector<GaloreLayer> galore(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int m = net.layers[l].w.rows();
    const int n = net.layers[l].w.cols();
    switch (kind) {
      case BaselineKind::kFull:
        full[l].opt = make_opt_state(m, n, 0.9, 0.999, 1e-8);
        break;
      case BaselineKind::kLora: {
        lora[l].w0 = net.layers[l].w;
        lora[l].a = Matrix(m, rank);
        Rng rng(derive_seed(cfg.seed, kLoraTag, static_cast<std::uint64_t>(l)));
        const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < rank; ++j) lora[l].a(i, j) = rng.normal(0.0, stddev);
        lora[l].b = Matrix(n, rank);
        lora[l].opt_a = make_opt_state(m, rank, 0.9, 0.999, 1e-8);
        lora[l].opt_b = make_opt_state(n, rank, 0.9, 0.999, 1e-8);
        break;
      }
      case BaselineKind::kGalore:
        galore[l].opt = make_opt_state(rank, n, 0.9, 0.999, 1e-8);
        break;
    }
  }

  const int n_train = task.train.inputs.rows();
  for (int i = 0; i < cfg.total_steps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch batch = select_rows(task.train, batch_indices(cfg.seed, i, n_train, cfg.batch_size));
    auto [train_loss, cache] = forward(net, batch);
    StepRecord rec;
    rec.step = i + 1;
    rec.train_loss = train_loss;
    rec.eval_loss = kNan;
    rec.bias = kNan;
    if (!std::isfinite(train_loss) || train_loss > kDivergenceCap) {
      history.steps.push_back(rec);
      history.aborted = true;
      history.abort_reason = "divergence: train loss " + format_double(train_loss);
      break;
    }
    std::vector<Matrix> grads = backward(net, cache);
    const double lr = step_lr(cfg, i);
    for (int l = 0; l < n_layers; ++l) {
      switch (kind) {
        case BaselineKind::kFull: {
          auto res = adam_step(full[l].opt, grads[l]);
          full[l].opt = std::move(res.state);
          net.layers[l].w -= res.delta * lr;
          break;
        }
        case BaselineKind::kLora: {
          Matrix grad_a = matmul(grads[l], lora[l].b);
          Matrix grad_b = matmul(grads[l].transposed(), lora[l].a);
          auto res_a = adam_step(lora[l].opt_a, grad_a);
          auto res_b = adam_step(lora[l].opt_b, grad_b);
          lora[l].opt_a = std::move(res_a.state);
          lora[l].opt_b = std::move(res_b.state);
          lora[l].a -= res_a.delta * lr;
          lora[l].b -= res_b.delta * lr;
          net.layers[l].w = lora[l].w0 + matmul(lora[l].a, lora[l].b.transposed());
          break;
        }
        case BaselineKind::kGalore: {
          if (i % cfg.check_freq == 0 && frobenius_norm(grads[l]) > 0.0)
            galore[l].p = galore_project(grads[l], rank).p;
          if (galore[l].p.rows() == 0)
            galore[l].p = galore_project(grads[l], rank).p;
          Matrix compressed = matmul(galore[l].p.transposed(), grads[l]);
          auto res = adam_step(galore[l].opt, compressed);
          galore[l].opt = std::move(res.state);
          net.layers[l].w -= matmul(galore[l].p, res.delta) * lr;
          break;
        }
      }
    }
    const bool eval_now =
        (cfg.eval_every > 0 && (i + 1) % cfg.eval_every == 0) || i + 1 == cfg.total_steps;
    if (eval_now) rec.eval_loss = evaluate(net, task.eval);
    if (cfg.timing) {
      const auto t1 = std::chrono::steady_clock::now();
      rec.ms_per_step = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    history.steps.push_back(rec);
  }
  history.final_eval = evaluate(net, task.eval);
  return history;
}

namespace {

MemoryEstimate make_estimate(MemoryMethod method, std::int64_t weights, std::int64_t proj,
                             std::int64_t opt) {
  MemoryEstimate e;
  e.method = method;
  e.weight_count = weights;
  e.projector_count = proj;
  e.opt_state_count = opt;
  e.total = weights + proj + opt;
  return e;
}

}  // namespace

MemoryEstimate memory_estimate(MemoryMethod method, int m, int n, int r_or_d, int opt_factor) {
  if (m < 1 || n < 1) throw std::invalid_argument("memory_estimate: dims must be positive");
  if (r_or_d < 0) throw std::invalid_argument("memory_estimate: negative rank");
  if (opt_factor < 1) throw std::invalid_argument("memory_estimate: opt_factor must be >= 1");
  const std::int64_t mn = static_cast<std::int64_t>(m) * n;
  const std::int64_t mr = static_cast<std::int64_t>(m) * r_or_d;
  const std::int64_t nr = static_cast<std::int64_t>(n) * r_or_d;
  const std::int64_t beta = opt_factor;
  switch (method) {
    case MemoryMethod::kFull:
      return make_estimate(method, mn, 0, beta * mn);
    case MemoryMethod::kLora:
      return make_estimate(method, mn, mr + nr, (beta - 1) * (mr + nr));
    case MemoryMethod::kGalore:
      return make_estimate(method, mn, mr, beta * nr);
    case MemoryMethod::kLsp:
      return make_estimate(method, mn, mr + nr, 0);
  }
  throw std::invalid_argument("memory_estimate: unknown method");
}

}  // namespace lsp
