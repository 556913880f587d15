// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_TRAINER_HPP_
#define LSP_TRAINER_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lsp/matrix.hpp"
#include "lsp/projector.hpp"
#include "lsp/subspace_opt.hpp"
#include "lsp/toy_models.hpp"

namespace lsp {

struct TrainConfig {
  int d = 32;
  int r = 4;
  double lr = 1e-3;
  int check_freq = 100;
  double alpha = 0.5;
  double chernoff_beta = 0.5;
  double delta = 0.1;
  double gamma_bound = 0.0;  // <= 0: use the running max of probed per-sample spectral norms
  int total_steps = 1000;
  FitConfig fit;
  std::uint64_t seed = 0;

  int batch_size = 32;
  int eval_every = 100;  // 0: evaluate only at the end
  int ring_capacity = 8;
  int probe_cap = 32;  // per-sample gradient probes per check for the gamma estimate
  bool identity_proj = false;  // identity-pattern pairs, d = m = n per layer
  bool fit_enabled = true;     // false: keep the random initial pairs (ablation)
  bool cosine_lr = false;
  bool timing = false;  // false keeps ms_per_step at 0 so reruns are byte-identical
  int baseline_rank = 4;
  TransferKind transfer = TransferKind::kEntrywiseSquare;
};

struct StepRecord {
  int step = 0;  // 1-based
  double train_loss = 0.0;
  double eval_loss = 0.0;  // NaN when not evaluated this step
  double bias = 0.0;       // NaN when no check ran this step; else mean over layers
  bool refreshed = false;
  double ms_per_step = 0.0;
};

struct CheckRecord {
  int step = 0;
  int layer = 0;
  double bias_before = 0.0;
  double bias_after = 0.0;
  bool refreshed = false;
  bool fit_timed_out = false;
  bool skipped_zero_grad = false;
  int fit_steps = 0;
  int subsample = 0;
};

// One projector lifetime: the pair plus the accumulated subspace update
// sum_t (-lr_t * delta_t), so decompress(pair, s_accum) is the weight change
// contributed by the period.
struct PeriodLog {
  ProjectorPair pair;
  Matrix s_accum;
  int steps_in_period = 0;
};

struct LayerLog {
  int m = 0;
  int n = 0;
  std::vector<PeriodLog> periods;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<CheckRecord> checks;
  std::vector<int> refresh_steps;
  std::vector<LayerLog> layer_logs;
  double final_eval = 0.0;
  double gamma_estimate = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

// Chernoff-style subsample size: ceil((8*gamma^2 / (3*beta^2)) * ln((m+n)*T/delta)).
std::int64_t subsample_size(double gamma_bound, double chernoff_beta, int m, int n,
                            int total_steps, double delta);

struct MaybeUpdateResult {
  ProjectorPair pair;
  SubspaceOptState state;
  bool refreshed = false;
  bool fit_timed_out = false;
  bool skipped_zero_grad = false;
  double bias_before = 0.0;
  double bias_after = 0.0;
  int fit_steps = 0;
};

// Bias-gated refresh: keeps the pair when relative bias on grad_sub is within
// cfg.alpha, otherwise re-initializes, fits on grad_sub plus extra_targets,
// and reprojects the optimizer state into the new subspace.
MaybeUpdateResult maybe_update(const Matrix& grad_sub, const ProjectorPair& pair,
                               const SubspaceOptState& state, const TrainConfig& cfg,
                               const std::vector<Matrix>& extra_targets,
                               std::uint64_t reinit_seed);

// Runs the subspace fine-tuning loop in place on net.
TrainHistory train_lsp(DenseNet& net, const TaskData& task, const TrainConfig& cfg);

// Cumulative weight change reconstructed from the per-period logs.
Matrix effective_update(const LayerLog& log);

// Shared batch stream so baselines consume identical batches at equal seeds.
std::vector<int> batch_indices(std::uint64_t seed, int step, int n_train, int batch_size);

void save_history(const TrainHistory& h, std::ostream& out);

}  // namespace lsp

#endif  // LSP_TRAINER_HPP_
