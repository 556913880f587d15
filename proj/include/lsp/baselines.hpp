// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_BASELINES_HPP_
#define LSP_BASELINES_HPP_

#include <cstdint>

#include "lsp/matrix.hpp"
#include "lsp/toy_models.hpp"
#include "lsp/trainer.hpp"

namespace lsp {

enum class BaselineKind { kFull, kLora, kGalore };

struct GaloreProjection {
  Matrix p;           // m x rank, top left singular vectors of the gradient
  Matrix compressed;  // rank x n, P^T grad
};

GaloreProjection galore_project(const Matrix& grad, int rank);

// |P P^T g - g|_F / |g|_F for a left-side orthonormal projector.
double galore_relative_bias(const Matrix& p, const Matrix& g);

// Trains net in place. kFull runs Adam on every weight matrix; kLora trains
// additive factors A B^T with W frozen (rank = cfg.baseline_rank); kGalore
// compresses gradients through a per-layer SVD basis refreshed every
// cfg.check_freq steps, with Adam state kept in rank space and not
// reprojected across refreshes.
TrainHistory train_baseline(BaselineKind kind, DenseNet& net, const TaskData& task,
                            const TrainConfig& cfg);

enum class MemoryMethod { kFull, kLora, kGalore, kLsp };

// Stored-scalar counts per weight matrix:
//   full:   (1 + beta) m n
//   lora:   m n + beta (m + n) r
//   galore: m n + (m + beta n) r
//   lsp:    m n + (m + n) r      (optimizer state lives on the host)
struct MemoryEstimate {
  MemoryMethod method = MemoryMethod::kFull;
  std::int64_t weight_count = 0;
  std::int64_t projector_count = 0;
  std::int64_t opt_state_count = 0;
  std::int64_t total = 0;
};

MemoryEstimate memory_estimate(MemoryMethod method, int m, int n, int r_or_d, int opt_factor);

}  // namespace lsp

#endif  // LSP_BASELINES_HPP_
