// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_SUBSPACE_OPT_HPP_
#define LSP_SUBSPACE_OPT_HPP_

#include <cstdint>
#include <iosfwd>

#include "lsp/matrix.hpp"
#include "lsp/projector.hpp"

namespace lsp {

// Adam moments over the d x d subspace. The learning rate is owned by the
// training configuration; adam_step returns an unscaled direction.
struct SubspaceOptState {
  Matrix m;  // first moment
  Matrix v;  // second moment, entrywise >= 0
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

SubspaceOptState make_opt_state(int d, double beta1 = 0.9, double beta2 = 0.999,
                                double eps = 1e-8);
// Rectangular variant; adam_step is entrywise, so baselines reuse it on
// full-size and rank-space moments.
SubspaceOptState make_opt_state(int rows, int cols, double beta1, double beta2, double eps);

struct AdamResult {
  SubspaceOptState state;
  Matrix delta;  // bias-corrected M / (sqrt(V) + eps), no learning rate applied
};

AdamResult adam_step(const SubspaceOptState& state, const Matrix& grad);

enum class TransferKind {
  kEntrywiseSquare,  // V transfers through entrywise-squared maps (default)
  kMatrixSquare,     // V transfers through the squared matrices themselves
};

// Transfer the moments into the subspace of a freshly fitted pair:
//   M <- (P_new^T P_old) M (Q_old^T Q_new)
//   V <- (P_new^T P_old)^∘2 V (Q_old^T Q_new)^∘2, clamped at zero.
SubspaceOptState reproject_state(const SubspaceOptState& state, const ProjectorPair& old_pair,
                                 const ProjectorPair& new_pair,
                                 TransferKind kind = TransferKind::kEntrywiseSquare);

// A^T B for two sparse projectors over the same row space, computed without
// densifying either factor.
Matrix projector_gram(const SparseProjector& a, const SparseProjector& b);

void save_opt_state(const SubspaceOptState& s, std::ostream& out);
SubspaceOptState load_opt_state(std::istream& in);

}  // namespace lsp

#endif  // LSP_SUBSPACE_OPT_HPP_
