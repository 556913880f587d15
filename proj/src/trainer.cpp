// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "lsp/common.hpp"
#include "lsp/rng.hpp"

namespace lsp {

namespace {

constexpr std::uint64_t kBatchTag = 0xba7c4;
constexpr std::uint64_t kCheckTag = 0xc4ec4;
constexpr std::uint64_t kInitTag = 0x1a171;
constexpr std::uint64_t kFitTag = 0xf17f17;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kDivergenceCap = 1e6;

void validate(const TrainConfig& cfg, const TaskData& task) {
  if (cfg.alpha <= 0.0 || cfg.alpha > 1.0)
    throw std::invalid_argument("train config: alpha must be in (0, 1]");
  if (cfg.check_freq < 1) throw std::invalid_argument("train config: check_freq must be >= 1");
  if (!cfg.identity_proj && cfg.d < cfg.r)
    throw std::invalid_argument("train config: need d >= r");
  if (cfg.total_steps < 0) throw std::invalid_argument("train config: negative total_steps");
  if (cfg.lr <= 0.0) throw std::invalid_argument("train config: lr must be positive");
  if (cfg.batch_size < 1 || cfg.batch_size > task.train.inputs.rows())
    throw std::invalid_argument("train config: batch_size exceeds train set");
  if (cfg.ring_capacity < 0) throw std::invalid_argument("train config: negative ring_capacity");
  if (cfg.delta <= 0.0 || cfg.delta >= 1.0)
    throw std::invalid_argument("train config: delta must be in (0, 1)");
  if (cfg.chernoff_beta <= 0.0)
    throw std::invalid_argument("train config: chernoff_beta must be positive");
}

double step_lr(const TrainConfig& cfg, int step_index) {
  if (!cfg.cosine_lr || cfg.total_steps <= 1) return cfg.lr;
  const double frac = static_cast<double>(step_index) / static_cast<double>(cfg.total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 * frac));
}

struct LayerState {
  ProjectorPair pair;
  SubspaceOptState opt;
  std::deque<Matrix> ring;  // recent full-batch gradients, newest at back
};

}  // namespace

std::int64_t subsample_size(double gamma_bound, double chernoff_beta, int m, int n,
                            int total_steps, double delta) {
  if (gamma_bound <= 0.0 || chernoff_beta <= 0.0 || m < 1 || n < 1 || total_steps < 1)
    throw std::invalid_argument("subsample_size: inputs must be positive");
  if (delta <= 0.0 || delta >= 1.0)
    throw std::invalid_argument("subsample_size: delta must be in (0, 1)");
  const double lead = 8.0 * gamma_bound * gamma_bound / (3.0 * chernoff_beta * chernoff_beta);
  const double log_arg =
      static_cast<double>(m + n) * static_cast<double>(total_steps) / delta;
  const double raw = lead * std::log(log_arg);
  if (raw >= 9.0e18) return 9000000000000000000LL;
  return static_cast<std::int64_t>(std::ceil(raw));
}

MaybeUpdateResult maybe_update(const Matrix& grad_sub, const ProjectorPair& pair,
                               const SubspaceOptState& state, const TrainConfig& cfg,
                               const std::vector<Matrix>& extra_targets,
                               std::uint64_t reinit_seed) {
  MaybeUpdateResult out;
  out.pair = pair;
  out.state = state;
  if (frobenius_norm(grad_sub) == 0.0) {
    out.skipped_zero_grad = true;
    out.bias_before = kNan;
    out.bias_after = kNan;
    return out;
  }
  out.bias_before = relative_bias(pair, grad_sub);
  out.bias_after = out.bias_before;
  if (out.bias_before <= cfg.alpha) return out;

  ProjectorPair fresh;
  fresh.p = init_sparse(pair.p.n_rows, pair.p.d, cfg.r, derive_seed(reinit_seed, 1));
  fresh.q = init_sparse(pair.q.n_rows, pair.q.d, cfg.r, derive_seed(reinit_seed, 2));
  fresh.birth_step = pair.birth_step;

  std::vector<Matrix> targets;
  targets.push_back(grad_sub);
  for (const Matrix& g : extra_targets)
    if (frobenius_norm(g) > 0.0) targets.push_back(g);

  FitConfig fit_cfg = cfg.fit;
  fit_cfg.seed = derive_seed(reinit_seed, 3);
  auto [fitted, report] = fit(fresh, targets, fit_cfg);

  out.pair = std::move(fitted);
  out.state = reproject_state(state, pair, out.pair, cfg.transfer);
  out.refreshed = true;
  out.fit_timed_out = report.timed_out || report.stalled;
  out.fit_steps = report.steps;
  out.bias_after = relative_bias(out.pair, grad_sub);
  return out;
}

std::vector<int> batch_indices(std::uint64_t seed, int step, int n_train, int batch_size) {
  Rng rng(derive_seed(seed, kBatchTag, static_cast<std::uint64_t>(step)));
  return rng.sample_without_replacement(n_train, batch_size);
}

namespace {

// Largest per-sample gradient spectral norm over the first probe_cap rows of
// the batch, across all layers.
double probe_gamma(const DenseNet& net, const Batch& batch, int probe_cap) {
  double gamma = 0.0;
  const int probes = std::min(probe_cap, batch.inputs.rows());
  for (int i = 0; i < probes; ++i) {
    Batch one = select_rows(batch, {i});
    auto [loss, cache] = forward(net, one);
    std::vector<Matrix> grads = backward(net, cache);
    for (const Matrix& g : grads) gamma = std::max(gamma, spectral_norm(g).value);
  }
  return gamma;
}

}  // namespace

TrainHistory train_lsp(DenseNet& net, const TaskData& task, const TrainConfig& cfg) {
  validate(cfg, task);
  const int n_layers = static_cast<int>(net.layers.size());
  TrainHistory history;
  history.layer_logs.resize(n_layers);

  std::vector<LayerState> layers(n_layers);
  for (int l = 0; l < n_layers; ++l) {
    const int m = net.layers[l].w.rows();
    const int n = net.layers[l].w.cols();
    history.layer_logs[l].m = m;
    history.layer_logs[l].n = n;
    if (cfg.identity_proj) {
      if (m != n)
        throw std::invalid_argument("train config: identity_proj requires square layers");
      layers[l].pair = {identity_pattern(m), identity_pattern(n), 0};
    } else {
      layers[l].pair = {
          init_sparse(m, cfg.d, cfg.r, derive_seed(cfg.seed, kInitTag, 2 * l)),
          init_sparse(n, cfg.d, cfg.r, derive_seed(cfg.seed, kInitTag, 2 * l + 1)), 0};
    }
    const int d = layers[l].pair.p.d;
    layers[l].opt = make_opt_state(d);
    history.layer_logs[l].periods.push_back(
        {layers[l].pair, Matrix(d, d), 0});
  }

  const int n_train = task.train.inputs.rows();
  double gamma = cfg.gamma_bound;
  int check_index = 0;

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
      rec.ms_per_step = 0.0;
      history.steps.push_back(rec);
      history.aborted = true;
      history.abort_reason = "divergence: train loss " + format_double(train_loss);
      break;
    }
    std::vector<Matrix> grads = backward(net, cache);
    const double lr = step_lr(cfg, i);
    for (int l = 0; l < n_layers; ++l) {
      Matrix g_sub = compress(layers[l].pair, grads[l]);
      auto res = adam_step(layers[l].opt, g_sub);
      layers[l].opt = std::move(res.state);
      net.layers[l].w -= decompress(layers[l].pair, res.delta) * lr;
      history.layer_logs[l].periods.back().s_accum += res.delta * (-lr);
      history.layer_logs[l].periods.back().steps_in_period += 1;
      if (cfg.ring_capacity > 0) {
        layers[l].ring.push_back(grads[l]);
        if (static_cast<int>(layers[l].ring.size()) > cfg.ring_capacity)
          layers[l].ring.pop_front();
      }
    }

    const bool check_now = cfg.fit_enabled && !cfg.identity_proj && (i + 1) % cfg.check_freq == 0;
    if (check_now) {
      if (cfg.gamma_bound <= 0.0) gamma = std::max(gamma, probe_gamma(net, batch, cfg.probe_cap));
      std::int64_t want = subsample_size(std::max(gamma, 1e-12), cfg.chernoff_beta,
                                         net.layers[0].w.rows(), net.layers[0].w.cols(),
                                         std::max(cfg.total_steps, 1), cfg.delta);
      const int sub_n = static_cast<int>(std::min<std::int64_t>(want, n_train));
      Rng sub_rng(derive_seed(cfg.seed, kCheckTag, static_cast<std::uint64_t>(check_index)));
      Batch sub = select_rows(task.train, sub_rng.sample_without_replacement(n_train, sub_n));
      auto [sub_loss, sub_cache] = forward(net, sub);
      std::vector<Matrix> sub_grads = backward(net, sub_cache);
      double bias_sum = 0.0;
      int bias_count = 0;
      bool any_refresh = false;
      for (int l = 0; l < n_layers; ++l) {
        std::vector<Matrix> ring_targets(layers[l].ring.begin(), layers[l].ring.end());
        MaybeUpdateResult res = maybe_update(
            sub_grads[l], layers[l].pair, layers[l].opt, cfg, ring_targets,
            derive_seed(cfg.seed, kFitTag,
                        static_cast<std::uint64_t>(check_index) * n_layers + l));
        CheckRecord check;
        check.step = i + 1;
        check.layer = l;
        check.bias_before = res.bias_before;
        check.bias_after = res.bias_after;
        check.refreshed = res.refreshed;
        check.fit_timed_out = res.fit_timed_out;
        check.skipped_zero_grad = res.skipped_zero_grad;
        check.fit_steps = res.fit_steps;
        check.subsample = sub_n;
        history.checks.push_back(check);
        if (!res.skipped_zero_grad) {
          bias_sum += res.bias_before;
          ++bias_count;
        }
        if (res.refreshed) {
          any_refresh = true;
          res.pair.birth_step = i + 1;
          layers[l].pair = res.pair;
          layers[l].opt = std::move(res.state);
          history.layer_logs[l].periods.push_back(
              {layers[l].pair, Matrix(layers[l].pair.p.d, layers[l].pair.q.d), 0});
        }
      }
      if (bias_count > 0) rec.bias = bias_sum / bias_count;
      rec.refreshed = any_refresh;
      if (any_refresh) history.refresh_steps.push_back(i + 1);
      ++check_index;
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

  history.gamma_estimate = gamma;
  history.final_eval = evaluate(net, task.eval);
  return history;
}

Matrix effective_update(const LayerLog& log) {
  if (log.m < 1 || log.n < 1) throw std::invalid_argument("effective_update: empty log");
  Matrix total(log.m, log.n);
  for (const PeriodLog& period : log.periods) {
    if (period.steps_in_period == 0) continue;
    total += decompress(period.pair, period.s_accum);
  }
  return total;
}

void save_history(const TrainHistory& h, std::ostream& out) {
  out << "step,train_loss,eval_loss,bias,refreshed,ms_per_step\n";
  for (const StepRecord& rec : h.steps) {
    out << rec.step << ',' << format_double(rec.train_loss) << ',';
    if (std::isfinite(rec.eval_loss)) out << format_double(rec.eval_loss);
    out << ',';
    if (std::isfinite(rec.bias)) out << format_double(rec.bias);
    out << ',' << (rec.refreshed ? 1 : 0) << ',' << format_double(rec.ms_per_step) << '\n';
  }
}

}  // namespace lsp
