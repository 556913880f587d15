// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/toy_models.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "lsp/common.hpp"
#include "lsp/rng.hpp"

namespace lsp {

namespace {

double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kNone: return z;
  }
  throw std::invalid_argument("unknown activation");
}

double activation_slope(Activation a, double z, double post) {
  switch (a) {
    case Activation::kTanh: return 1.0 - post * post;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kNone: return 1.0;
  }
  throw std::invalid_argument("unknown activation");
}

std::vector<int> fingerprint(const DenseNet& net) {
  std::vector<int> fp;
  fp.push_back(static_cast<int>(net.loss));
  for (const DenseLayer& l : net.layers) {
    fp.push_back(l.w.rows());
    fp.push_back(l.w.cols());
    fp.push_back(static_cast<int>(l.activation));
  }
  return fp;
}

Matrix net_outputs(const DenseNet& net, const Matrix& inputs, ForwardCache* cache) {
  Matrix a = inputs;
  if (cache) cache->post.push_back(a);
  for (const DenseLayer& layer : net.layers) {
    Matrix z = matmul(a, layer.w);
    if (!z.all_finite()) throw NumericError("forward: non-finite activations");
    Matrix post(z.rows(), z.cols());
    for (int r = 0; r < z.rows(); ++r)
      for (int c = 0; c < z.cols(); ++c) post(r, c) = apply_activation(layer.activation, z(r, c));
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(post);
    }
    a = std::move(post);
  }
  return a;
}

double mse_loss(const Matrix& out, const Matrix& targets) {
  if (!out.same_shape(targets)) throw std::invalid_argument("forward: target dims mismatch");
  const double d = frobenius_distance(out, targets);
  return d * d / static_cast<double>(out.rows());
}

double softmax_ce_loss(const Matrix& out, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != out.rows())
    throw std::invalid_argument("forward: label count mismatch");
  double total = 0.0;
  for (int r = 0; r < out.rows(); ++r) {
    if (labels[r] < 0 || labels[r] >= out.cols())
      throw std::invalid_argument("forward: label out of range");
    double mx = out(r, 0);
    for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, out(r, c));
    double lse = 0.0;
    for (int c = 0; c < out.cols(); ++c) lse += std::exp(out(r, c) - mx);
    total += std::log(lse) + mx - out(r, labels[r]);
  }
  return total / static_cast<double>(out.rows());
}

}  // namespace

DenseNet make_net(int n_in, int n_hidden, int n_out, int n_layers, Activation activation,
                  LossKind loss, std::uint64_t seed) {
  if (n_in < 1 || n_hidden < 1 || n_out < 1 || n_layers < 1)
    throw std::invalid_argument("make_net: dimensions must be positive");
  DenseNet net;
  net.loss = loss;
  for (int l = 0; l < n_layers; ++l) {
    const int fan_in = (l == 0) ? n_in : n_hidden;
    const int fan_out = (l == n_layers - 1) ? n_out : n_hidden;
    DenseLayer layer;
    layer.activation = (l == n_layers - 1) ? Activation::kNone : activation;
    layer.w = Matrix(fan_in, fan_out);
    Rng rng(derive_seed(seed, 0x6e6574, static_cast<std::uint64_t>(l)));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int r = 0; r < fan_in; ++r)
      for (int c = 0; c < fan_out; ++c) layer.w(r, c) = rng.normal(0.0, stddev);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::pair<double, ForwardCache> forward(const DenseNet& net, const Batch& batch) {
  if (net.layers.empty()) throw std::invalid_argument("forward: empty network");
  if (batch.inputs.rows() < 1) throw std::invalid_argument("forward: empty batch");
  if (batch.inputs.cols() != net.layers.front().w.rows())
    throw std::invalid_argument("forward: input width does not match first layer");
  ForwardCache cache;
  cache.loss = net.loss;
  cache.targets = batch.targets;
  cache.labels = batch.labels;
  cache.shape_fingerprint = fingerprint(net);
  Matrix out = net_outputs(net, batch.inputs, &cache);
  double loss = net.loss == LossKind::kMse ? mse_loss(out, batch.targets)
                                           : softmax_ce_loss(out, batch.labels);
  if (!std::isfinite(loss)) throw NumericError("forward: non-finite loss");
  return {loss, std::move(cache)};
}

std::vector<Matrix> backward(const DenseNet& net, const ForwardCache& cache) {
  if (cache.shape_fingerprint != fingerprint(net))
    throw std::invalid_argument("backward: cache does not match network");
  if (cache.pre.size() != net.layers.size() || cache.post.size() != net.layers.size() + 1)
    throw std::invalid_argument("backward: incomplete cache");
  const int n_layers = static_cast<int>(net.layers.size());
  const Matrix& out = cache.post.back();
  const double inv_batch = 1.0 / static_cast<double>(out.rows());

  Matrix d_post(out.rows(), out.cols());
  if (cache.loss == LossKind::kMse) {
    for (int r = 0; r < out.rows(); ++r)
      for (int c = 0; c < out.cols(); ++c)
        d_post(r, c) = 2.0 * (out(r, c) - cache.targets(r, c)) * inv_batch;
  } else {
    for (int r = 0; r < out.rows(); ++r) {
      double mx = out(r, 0);
      for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, out(r, c));
      double lse = 0.0;
      for (int c = 0; c < out.cols(); ++c) lse += std::exp(out(r, c) - mx);
      for (int c = 0; c < out.cols(); ++c) {
        const double soft = std::exp(out(r, c) - mx) / lse;
        d_post(r, c) = (soft - (c == cache.labels[r] ? 1.0 : 0.0)) * inv_batch;
      }
    }
  }

  std::vector<Matrix> grads(n_layers);
  for (int l = n_layers - 1; l >= 0; --l) {
    const Matrix& z = cache.pre[l];
    const Matrix& post = cache.post[l + 1];
    Matrix d_pre(z.rows(), z.cols());
    for (int r = 0; r < z.rows(); ++r)
      for (int c = 0; c < z.cols(); ++c)
        d_pre(r, c) = d_post(r, c) * activation_slope(net.layers[l].activation, z(r, c), post(r, c));
    grads[l] = matmul(cache.post[l].transposed(), d_pre);
    if (l > 0) d_post = matmul(d_pre, net.layers[l].w.transposed());
  }
  return grads;
}

double evaluate(const DenseNet& net, const Dataset& data) {
  return forward(net, data).first;
}

namespace {

Dataset make_regression_split(const DenseNet& teacher, int rows, int n_in, double noise_std,
                              Rng& rng, bool noisy) {
  Dataset d;
  d.inputs = Matrix(rows, n_in);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < n_in; ++c) d.inputs(r, c) = rng.normal();
  d.targets = net_outputs(teacher, d.inputs, nullptr);
  if (noisy && noise_std > 0.0)
    for (int r = 0; r < d.targets.rows(); ++r)
      for (int c = 0; c < d.targets.cols(); ++c)
        d.targets(r, c) += rng.normal(0.0, noise_std);
  return d;
}

Dataset make_classification_split(const Matrix& means, int rows, Rng& rng) {
  const int n_classes = means.rows();
  const int n_in = means.cols();
  Dataset d;
  d.inputs = Matrix(rows, n_in);
  d.targets = Matrix(rows, 0);
  d.labels.resize(rows);
  for (int r = 0; r < rows; ++r) {
    const int label = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_classes)));
    d.labels[r] = label;
    for (int c = 0; c < n_in; ++c) d.inputs(r, c) = means(label, c) + rng.normal();
  }
  return d;
}

}  // namespace

TaskData make_task(const SyntheticTask& spec) {
  if (spec.n_in < 1 || spec.n_out < 1 || spec.n_train < 1 || spec.n_eval < 1)
    throw std::invalid_argument("make_task: dimensions must be positive");
  if (spec.noise_std < 0.0) throw std::invalid_argument("make_task: negative noise_std");
  TaskData data;
  if (spec.kind == TaskKind::kTeacherStudentRegression) {
    data.teacher = make_net(spec.n_in, spec.n_hidden, spec.n_out, spec.n_layers,
                            spec.activation, LossKind::kMse, derive_seed(spec.seed, 1));
    Rng train_rng(derive_seed(spec.seed, 2));
    Rng eval_rng(derive_seed(spec.seed, 3));
    data.train = make_regression_split(data.teacher, spec.n_train, spec.n_in, spec.noise_std,
                                       train_rng, true);
    data.eval = make_regression_split(data.teacher, spec.n_eval, spec.n_in, spec.noise_std,
                                      eval_rng, false);
    return data;
  }
  Rng mean_rng(derive_seed(spec.seed, 4));
  Matrix means(spec.n_out, spec.n_in);
  for (int r = 0; r < spec.n_out; ++r)
    for (int c = 0; c < spec.n_in; ++c) means(r, c) = mean_rng.normal(0.0, 2.0);
  Rng train_rng(derive_seed(spec.seed, 5));
  Rng eval_rng(derive_seed(spec.seed, 6));
  data.train = make_classification_split(means, spec.n_train, train_rng);
  data.eval = make_classification_split(means, spec.n_eval, eval_rng);
  return data;
}

Batch select_rows(const Dataset& data, const std::vector<int>& rows) {
  Batch b;
  b.inputs = Matrix(static_cast<int>(rows.size()), data.inputs.cols());
  b.targets = Matrix(static_cast<int>(rows.size()), data.targets.cols());
  if (!data.labels.empty()) b.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int src = rows[i];
    if (src < 0 || src >= data.inputs.rows())
      throw std::invalid_argument("select_rows: index out of range");
    for (int c = 0; c < data.inputs.cols(); ++c)
      b.inputs(static_cast<int>(i), c) = data.inputs(src, c);
    for (int c = 0; c < data.targets.cols(); ++c)
      b.targets(static_cast<int>(i), c) = data.targets(src, c);
    if (!data.labels.empty()) b.labels[i] = data.labels[src];
  }
  return b;
}

void save_dataset(const Dataset& d, std::ostream& out) {
  out << d.inputs.rows() << ' ' << d.inputs.cols() << ' ' << d.targets.cols() << ' '
      << d.labels.size() << '\n';
  save_csv(d.inputs, out);
  if (d.targets.cols() > 0) save_csv(d.targets, out);
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (i) out << ' ';
    out << d.labels[i];
  }
  if (!d.labels.empty()) out << '\n';
}

Dataset load_dataset(std::istream& in) {
  int rows = 0, n_in = 0, n_target = 0;
  std::size_t n_labels = 0;
  std::string header;
  if (!std::getline(in, header)) throw IoError("load_dataset: missing header");
  std::istringstream h(header);
  if (!(h >> rows >> n_in >> n_target >> n_labels)) throw IoError("load_dataset: bad header");
  if (rows < 1 || n_in < 1) throw IoError("load_dataset: bad dimensions");
  Dataset d;
  std::string line;
  std::string part;
  for (int i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw IoError("load_dataset: truncated inputs");
    part += line + "\n";
  }
  std::istringstream is(part);
  d.inputs = load_csv(is);
  if (n_target > 0) {
    part.clear();
    for (int i = 0; i < rows; ++i) {
      if (!std::getline(in, line)) throw IoError("load_dataset: truncated targets");
      part += line + "\n";
    }
    std::istringstream ts(part);
    d.targets = load_csv(ts);
  } else {
    d.targets = Matrix(rows, 0);
  }
  if (n_labels > 0) {
    if (n_labels != static_cast<std::size_t>(rows)) throw IoError("load_dataset: label count");
    d.labels.resize(n_labels);
    for (std::size_t i = 0; i < n_labels; ++i)
      if (!(in >> d.labels[i])) throw IoError("load_dataset: truncated labels");
  }
  if (d.inputs.rows() != rows || d.inputs.cols() != n_in)
    throw IoError("load_dataset: input dims disagree with header");
  return d;
}

}  // namespace lsp
