// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/toy_models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "lsp/matrix.hpp"
#include "lsp/rng.hpp"

namespace lsp {
namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

DenseNet single_linear(const Matrix& w) {
  DenseNet net;
  net.loss = LossKind::kMse;
  net.layers.push_back({w, Activation::kNone});
  return net;
}

TEST(Forward, IdentityLayerOnOwnInputsHasZeroLoss) {
  Rng rng(3);
  Batch batch;
  batch.inputs = random_matrix(4, 5, rng);
  batch.targets = batch.inputs;
  DenseNet net = single_linear(Matrix::identity(5));
  auto [loss, cache] = forward(net, batch);
  EXPECT_EQ(loss, 0.0);
}

TEST(Forward, ZeroNetZeroTargetsHasZeroLoss) {
  Rng rng(5);
  Batch batch;
  batch.inputs = random_matrix(4, 5, rng);
  batch.targets = Matrix(4, 3);
  DenseNet net = single_linear(Matrix(5, 3));
  auto [loss, cache] = forward(net, batch);
  EXPECT_EQ(loss, 0.0);
}

TEST(Forward, MatchesScalarRecomputation) {
  DenseNet net;
  net.loss = LossKind::kMse;
  net.layers.push_back({Matrix(1, 1, {0.7}), Activation::kTanh});
  net.layers.push_back({Matrix(1, 1, {-1.3}), Activation::kNone});
  Batch batch;
  batch.inputs = Matrix(2, 1, {0.5, -2.0});
  batch.targets = Matrix(2, 1, {0.1, 0.9});
  auto [loss, cache] = forward(net, batch);
  double want = 0.0;
  for (int b = 0; b < 2; ++b) {
    const double out = std::tanh(batch.inputs(b, 0) * 0.7) * -1.3;
    want += (out - batch.targets(b, 0)) * (out - batch.targets(b, 0));
  }
  want /= 2.0;
  EXPECT_NEAR(loss, want, 1e-15);
}

TEST(Forward, DeterministicAcrossCalls) {
  SyntheticTask spec;
  spec.n_in = 8;
  spec.n_hidden = 8;
  spec.n_out = 8;
  spec.n_train = 16;
  spec.n_eval = 8;
  spec.noise_std = 0.1;
  spec.seed = 9;
  TaskData task = make_task(spec);
  DenseNet net = make_net(8, 8, 8, 3, Activation::kTanh, LossKind::kMse, 11);
  auto [l1, c1] = forward(net, task.train);
  auto [l2, c2] = forward(net, task.train);
  EXPECT_EQ(l1, l2);
}

TEST(Backward, ZeroAtRealizedTargets) {
  Rng rng(7);
  Matrix w = random_matrix(5, 3, rng);
  Batch batch;
  batch.inputs = random_matrix(6, 5, rng);
  batch.targets = matmul(batch.inputs, w);
  DenseNet net = single_linear(w);
  auto [loss, cache] = forward(net, batch);
  EXPECT_EQ(loss, 0.0);
  std::vector<Matrix> grads = backward(net, cache);
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_EQ(frobenius_norm(grads[0]), 0.0);
}

TEST(Backward, ClosedFormSingleLinearMse) {
  Rng rng(13);
  Matrix w = random_matrix(5, 3, rng);
  Batch batch;
  batch.inputs = random_matrix(8, 5, rng);
  batch.targets = random_matrix(8, 3, rng);
  DenseNet net = single_linear(w);
  auto [loss, cache] = forward(net, batch);
  std::vector<Matrix> grads = backward(net, cache);
  Matrix resid = matmul(batch.inputs, w) - batch.targets;
  Matrix want = matmul(batch.inputs.transposed(), resid) * (2.0 / 8.0);
  EXPECT_LE(frobenius_distance(grads[0], want), 1e-12 * std::max(1.0, frobenius_norm(want)));
}

void finite_difference_check(DenseNet net, Batch batch) {
  auto [loss, cache] = forward(net, batch);
  std::vector<Matrix> grads = backward(net, cache);
  const double h = 1e-6;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix& w = net.layers[l].w;
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) {
        const double orig = w(r, c);
        w(r, c) = orig + h;
        const double up = forward(net, batch).first;
        w(r, c) = orig - h;
        const double down = forward(net, batch).first;
        w(r, c) = orig;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(grads[l](r, c)), 1e-4});
        EXPECT_LE(std::abs(fd - grads[l](r, c)) / scale, 1e-5)
            << "layer " << l << " (" << r << "," << c << ")";
      }
  }
}

TEST(Backward, FiniteDifferencesAllActivationLossCombos) {
  Rng rng(17);
  for (Activation act : {Activation::kTanh, Activation::kRelu, Activation::kNone}) {
    for (LossKind loss : {LossKind::kMse, LossKind::kSoftmaxCe}) {
      DenseNet net = make_net(5, 4, 3, 2, act, loss, 23);
      Batch batch;
      batch.inputs = random_matrix(4, 5, rng);
      if (loss == LossKind::kMse) {
        batch.targets = random_matrix(4, 3, rng);
      } else {
        batch.targets = Matrix(4, 0);
        batch.labels = {0, 2, 1, 2};
      }
      finite_difference_check(net, batch);
    }
  }
}

TEST(Backward, RejectsStaleCache) {
  Rng rng(19);
  DenseNet a = make_net(5, 4, 3, 2, Activation::kTanh, LossKind::kMse, 1);
  DenseNet b = make_net(5, 6, 3, 2, Activation::kTanh, LossKind::kMse, 2);
  Batch batch;
  batch.inputs = random_matrix(4, 5, rng);
  batch.targets = random_matrix(4, 3, rng);
  auto [loss, cache] = forward(a, batch);
  EXPECT_THROW(backward(b, cache), std::invalid_argument);
}

TEST(MakeTask, NoiselessTeacherScoresZero) {
  SyntheticTask spec;
  spec.n_in = 6;
  spec.n_hidden = 6;
  spec.n_out = 4;
  spec.n_train = 20;
  spec.n_eval = 10;
  spec.noise_std = 0.0;
  spec.seed = 31;
  TaskData task = make_task(spec);
  EXPECT_EQ(evaluate(task.teacher, task.train), 0.0);
  EXPECT_EQ(evaluate(task.teacher, task.eval), 0.0);
}

TEST(MakeTask, EvalTargetsAreCleanUnderNoise) {
  SyntheticTask spec;
  spec.n_in = 6;
  spec.n_hidden = 6;
  spec.n_out = 4;
  spec.n_train = 64;
  spec.n_eval = 32;
  spec.noise_std = 0.25;
  spec.seed = 37;
  TaskData task = make_task(spec);
  EXPECT_EQ(evaluate(task.teacher, task.eval), 0.0);
  const double train_loss = evaluate(task.teacher, task.train);
  const double floor = spec.n_out * spec.noise_std * spec.noise_std;
  EXPECT_GT(train_loss, 0.2 * floor);
  EXPECT_LT(train_loss, 3.0 * floor);
}

TEST(MakeTask, DeterministicGivenSeed) {
  SyntheticTask spec;
  spec.n_in = 5;
  spec.n_out = 3;
  spec.n_train = 12;
  spec.n_eval = 6;
  spec.noise_std = 0.1;
  spec.seed = 41;
  TaskData a = make_task(spec);
  TaskData b = make_task(spec);
  EXPECT_LE(frobenius_distance(a.train.inputs, b.train.inputs), 0.0);
  EXPECT_LE(frobenius_distance(a.train.targets, b.train.targets), 0.0);
  spec.seed = 42;
  TaskData c = make_task(spec);
  EXPECT_GT(frobenius_distance(a.train.inputs, c.train.inputs), 0.0);
}

TEST(MakeTask, ClassificationProducesValidLabels) {
  SyntheticTask spec;
  spec.kind = TaskKind::kGaussianClassification;
  spec.n_in = 8;
  spec.n_out = 4;
  spec.n_train = 40;
  spec.n_eval = 20;
  spec.seed = 43;
  TaskData task = make_task(spec);
  ASSERT_EQ(task.train.labels.size(), 40u);
  ASSERT_EQ(task.eval.labels.size(), 20u);
  for (int l : task.train.labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 4);
  }
  DenseNet net = make_net(8, 8, 4, 2, Activation::kTanh, LossKind::kSoftmaxCe, 47);
  EXPECT_TRUE(std::isfinite(evaluate(net, task.train)));
}

TEST(SelectRows, ExtractsRequestedSubset) {
  Rng rng(53);
  Dataset d;
  d.inputs = random_matrix(6, 3, rng);
  d.targets = random_matrix(6, 2, rng);
  Batch b = select_rows(d, {4, 1});
  ASSERT_EQ(b.inputs.rows(), 2);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(b.inputs(0, c), d.inputs(4, c));
    EXPECT_EQ(b.inputs(1, c), d.inputs(1, c));
  }
  for (int c = 0; c < 2; ++c) EXPECT_EQ(b.targets(0, c), d.targets(4, c));
  EXPECT_THROW(select_rows(d, {6}), std::invalid_argument);
}

TEST(DatasetIo, RoundTripsBothKinds) {
  SyntheticTask reg;
  reg.n_in = 4;
  reg.n_out = 3;
  reg.n_train = 8;
  reg.n_eval = 4;
  reg.noise_std = 0.2;
  reg.seed = 59;
  Dataset d = make_task(reg).train;
  std::ostringstream out;
  save_dataset(d, out);
  std::istringstream in(out.str());
  Dataset e = load_dataset(in);
  EXPECT_LE(frobenius_distance(d.inputs, e.inputs), 0.0);
  EXPECT_LE(frobenius_distance(d.targets, e.targets), 0.0);

  SyntheticTask cls;
  cls.kind = TaskKind::kGaussianClassification;
  cls.n_in = 4;
  cls.n_out = 3;
  cls.n_train = 8;
  cls.n_eval = 4;
  cls.seed = 61;
  Dataset c = make_task(cls).train;
  std::ostringstream out2;
  save_dataset(c, out2);
  std::istringstream in2(out2.str());
  Dataset f = load_dataset(in2);
  EXPECT_LE(frobenius_distance(c.inputs, f.inputs), 0.0);
  EXPECT_EQ(c.labels, f.labels);
}

}  // namespace
}  // namespace lsp
