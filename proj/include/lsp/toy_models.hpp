// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_TOY_MODELS_HPP_
#define LSP_TOY_MODELS_HPP_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lsp/matrix.hpp"

namespace lsp {

enum class Activation { kTanh, kRelu, kNone };
enum class LossKind { kMse, kSoftmaxCe };

struct DenseLayer {
  Matrix w;  // fan_in x fan_out, no bias
  Activation activation = Activation::kTanh;
};

struct DenseNet {
  std::vector<DenseLayer> layers;
  LossKind loss = LossKind::kMse;
};

// Inputs are batch x n_in. For mse, targets is batch x n_out; for
// softmax_ce, labels holds one class index per batch row.
struct Batch {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;
};
using Dataset = Batch;

struct ForwardCache {
  std::vector<Matrix> pre;   // Z_l = A_{l-1} W_l
  std::vector<Matrix> post;  // A_l = act(Z_l); post[0] is the input batch
  Matrix targets;
  std::vector<int> labels;
  LossKind loss = LossKind::kMse;
  std::vector<int> shape_fingerprint;  // per layer: rows, cols, activation
};

DenseNet make_net(int n_in, int n_hidden, int n_out, int n_layers, Activation activation,
                  LossKind loss, std::uint64_t seed);

std::pair<double, ForwardCache> forward(const DenseNet& net, const Batch& batch);
std::vector<Matrix> backward(const DenseNet& net, const ForwardCache& cache);

// Mean loss over a full dataset, no cache retained.
double evaluate(const DenseNet& net, const Dataset& data);

enum class TaskKind { kTeacherStudentRegression, kGaussianClassification };

struct SyntheticTask {
  TaskKind kind = TaskKind::kTeacherStudentRegression;
  int n_in = 64;
  int n_hidden = 64;
  int n_out = 64;
  int n_layers = 3;
  int n_train = 256;
  int n_eval = 128;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  Activation activation = Activation::kTanh;
};

struct TaskData {
  Dataset train;
  Dataset eval;
  DenseNet teacher;  // empty for classification tasks
};

// Teacher-student: targets are a random teacher net's outputs, with Gaussian
// noise added to the TRAIN targets only, so eval loss measures distance to
// the clean teacher function.
TaskData make_task(const SyntheticTask& spec);

Batch select_rows(const Dataset& data, const std::vector<int>& rows);

void save_dataset(const Dataset& d, std::ostream& out);
Dataset load_dataset(std::istream& in);

}  // namespace lsp

#endif  // LSP_TOY_MODELS_HPP_
