// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lsp/baselines.hpp"
#include "lsp/common.hpp"
#include "lsp/matrix.hpp"
#include "lsp/projector.hpp"
#include "lsp/schedule_sim.hpp"
#include "lsp/sha256.hpp"
#include "lsp/toy_models.hpp"
#include "lsp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lsp {
namespace {

// Sub-seed tags; every random stream a command owns is derived from the one
// master seed through these.
constexpr std::uint64_t kTagTask = 0x7a5601;
constexpr std::uint64_t kTagNet = 0x0ec701;
constexpr std::uint64_t kTagTrain = 0x72a101;
constexpr std::uint64_t kTagCollect = 0xc01101;
constexpr std::uint64_t kTagProjP = 0x901a01;
constexpr std::uint64_t kTagProjQ = 0x901b01;
constexpr std::uint64_t kTagFit = 0xf17a01;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed on " + path);
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

json parse_json_text(const std::string& text, const std::string& origin) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw IoError(origin + " is not valid JSON");
  return doc;
}

// Typed, whitelisted access to one JSON object; unknown keys and wrong types
// are reported with their full path.
class JsonView {
 public:
  JsonView(const json& obj, std::string where,
           std::initializer_list<const char*> allowed)
      : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    for (const auto& item : obj_.items()) {
      bool known = false;
      for (const char* key : allowed) {
        if (item.key() == key) {
          known = true;
          break;
        }
      }
      if (!known) {
        throw ConfigError("unknown key \"" + item.key() + "\" in " + where_);
      }
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& raw(const char* key) const { return obj_.at(key); }

  int get_int(const char* key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key) + " must be an integer");
    return v.get<int>();
  }

  std::uint64_t get_seed(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    const bool ok = v.is_number_unsigned() ||
                    (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) throw ConfigError(path(key) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  double get_double(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(path(key) + " must be a number");
    return v.get<double>();
  }

  bool get_bool(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + " must be a boolean");
    return v.get<bool>();
  }

  std::string get_string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(path(key) + " must be a string");
    return v.get<std::string>();
  }

  std::vector<int> get_int_list(const char* key) const {
    if (!has(key)) return {};
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(path(key) + " must be an array of integers");
    std::vector<int> out;
    for (const json& item : v) {
      if (!item.is_number_integer()) {
        throw ConfigError(path(key) + " must be an array of integers");
      }
      out.push_back(item.get<int>());
    }
    return out;
  }

 private:
  std::string path(const char* key) const { return where_ + "." + key; }

  const json& obj_;
  std::string where_;
};

json section(const json& doc, const char* key) {
  return doc.contains(key) ? doc.at(key) : json::object();
}

SyntheticTask parse_task(const json& j) {
  JsonView v(j, "task",
             {"kind", "n_in", "n_hidden", "n_out", "n_layers", "n_train",
              "n_eval", "noise_std", "activation"});
  SyntheticTask t;
  const std::string kind = v.get_string("kind", "teacher_student");
  if (kind == "teacher_student") {
    t.kind = TaskKind::kTeacherStudentRegression;
  } else if (kind == "gaussian_classification") {
    t.kind = TaskKind::kGaussianClassification;
  } else {
    throw ConfigError(
        "task.kind must be \"teacher_student\" or \"gaussian_classification\"");
  }
  t.n_in = v.get_int("n_in", t.n_in);
  t.n_hidden = v.get_int("n_hidden", t.n_hidden);
  t.n_out = v.get_int("n_out", t.n_out);
  t.n_layers = v.get_int("n_layers", t.n_layers);
  t.n_train = v.get_int("n_train", t.n_train);
  t.n_eval = v.get_int("n_eval", t.n_eval);
  t.noise_std = v.get_double("noise_std", t.noise_std);
  const std::string act = v.get_string("activation", "tanh");
  if (act == "tanh") {
    t.activation = Activation::kTanh;
  } else if (act == "relu") {
    t.activation = Activation::kRelu;
  } else if (act == "none") {
    t.activation = Activation::kNone;
  } else {
    throw ConfigError("task.activation must be \"tanh\", \"relu\", or \"none\"");
  }
  return t;
}

FitConfig parse_fit_config(const json& j, FitConfig base, const std::string& where) {
  JsonView v(j, where,
             {"alpha", "reg_beta", "step_size", "max_steps", "timeout_steps",
              "reg_kind"});
  base.alpha = v.get_double("alpha", base.alpha);
  base.reg_beta = v.get_double("reg_beta", base.reg_beta);
  base.step_size = v.get_double("step_size", base.step_size);
  base.max_steps = v.get_int("max_steps", base.max_steps);
  base.timeout_steps = v.get_int("timeout_steps", base.timeout_steps);
  if (v.has("reg_kind")) {
    const std::string kind = v.get_string("reg_kind", "");
    if (kind == "squared") {
      base.reg_kind = RegKind::kSquared;
    } else if (kind == "unsquared") {
      base.reg_kind = RegKind::kUnsquared;
    } else {
      throw ConfigError(where + ".reg_kind must be \"squared\" or \"unsquared\"");
    }
  }
  return base;
}

TrainConfig parse_train_config(const json& j) {
  JsonView v(j, "train",
             {"d", "r", "lr", "check_freq", "alpha", "chernoff_beta", "delta",
              "gamma_bound", "total_steps", "batch_size", "eval_every",
              "ring_capacity", "probe_cap", "identity_proj", "fit_enabled",
              "cosine_lr", "timing", "baseline_rank", "transfer", "fit"});
  TrainConfig c;
  c.d = v.get_int("d", c.d);
  c.r = v.get_int("r", c.r);
  c.lr = v.get_double("lr", c.lr);
  c.check_freq = v.get_int("check_freq", c.check_freq);
  c.alpha = v.get_double("alpha", c.alpha);
  c.chernoff_beta = v.get_double("chernoff_beta", c.chernoff_beta);
  c.delta = v.get_double("delta", c.delta);
  c.gamma_bound = v.get_double("gamma_bound", c.gamma_bound);
  c.total_steps = v.get_int("total_steps", c.total_steps);
  c.batch_size = v.get_int("batch_size", c.batch_size);
  c.eval_every = v.get_int("eval_every", c.eval_every);
  c.ring_capacity = v.get_int("ring_capacity", c.ring_capacity);
  c.probe_cap = v.get_int("probe_cap", c.probe_cap);
  c.identity_proj = v.get_bool("identity_proj", c.identity_proj);
  c.fit_enabled = v.get_bool("fit_enabled", c.fit_enabled);
  c.cosine_lr = v.get_bool("cosine_lr", c.cosine_lr);
  c.timing = v.get_bool("timing", c.timing);
  c.baseline_rank = v.get_int("baseline_rank", c.baseline_rank);
  if (v.has("transfer")) {
    const std::string t = v.get_string("transfer", "");
    if (t == "entrywise_square") {
      c.transfer = TransferKind::kEntrywiseSquare;
    } else if (t == "matrix_square") {
      c.transfer = TransferKind::kMatrixSquare;
    } else {
      throw ConfigError(
          "train.transfer must be \"entrywise_square\" or \"matrix_square\"");
    }
  }
  if (v.has("fit")) c.fit = parse_fit_config(v.raw("fit"), c.fit, "train.fit");
  return c;
}

BaselineKind parse_baseline(const std::string& method) {
  if (method == "full") return BaselineKind::kFull;
  if (method == "galore") return BaselineKind::kGalore;
  if (method == "lora") return BaselineKind::kLora;
  throw ConfigError("method must be one of lsp, full, galore, lora; got \"" +
                    method + "\"");
}

LossKind loss_for(TaskKind kind) {
  return kind == TaskKind::kGaussianClassification ? LossKind::kSoftmaxCe
                                                   : LossKind::kMse;
}

fs::path prepare_run_dir(const std::string& out) {
  if (out.empty()) {
    throw ConfigError("output directory not set; pass --out or config key \"out\"");
  }
  fs::path dir(out);
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) {
      throw IoError(out + " exists and is not a directory");
    }
    if (!fs::is_empty(dir, ec)) {
      throw IoError("refusing to overwrite non-empty run directory " + out);
    }
  } else {
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory " + out + ": " + ec.message());
  }
  return dir;
}

void write_metadata(const fs::path& dir, const std::string& command,
                    std::optional<std::uint64_t> seed, const json& config,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
  json meta;
  meta["command"] = command;
  if (seed) meta["seed"] = *seed;
  meta["config"] = config;
  json hashed = json::object();
  for (const auto& [path, text] : inputs) {
    hashed[path] = "sha256:" + blob_hash(text);
  }
  meta["inputs"] = hashed;
  write_text(dir / "run_metadata.json", meta.dump(2) + "\n");
}

void write_history_csv(const TrainHistory& h, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  save_history(h, out);
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

void write_final_weights(const DenseNet& net, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "layer,row,col,value\n";
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Matrix& w = net.layers[l].w;
    for (int r = 0; r < w.rows(); ++r) {
      for (int c = 0; c < w.cols(); ++c) {
        out << l << ',' << r << ',' << c << ',' << format_double(w(r, c)) << '\n';
      }
    }
  }
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

json history_results(const TrainHistory& h) {
  json res;
  res["final_train_loss"] = h.steps.empty() ? json() : json(h.steps.back().train_loss);
  res["final_eval_loss"] = h.final_eval;
  res["refreshes"] = h.refresh_steps.size();
  res["gamma_estimate"] = h.gamma_estimate;
  res["steps_recorded"] = h.steps.size();
  res["aborted"] = h.aborted;
  res["abort_reason"] = h.abort_reason;
  return res;
}

MemoryMethod memory_method(const std::string& method) {
  if (method == "lsp") return MemoryMethod::kLsp;
  if (method == "full") return MemoryMethod::kFull;
  if (method == "galore") return MemoryMethod::kGalore;
  return MemoryMethod::kLora;
}

// Stored-scalar totals summed over the net's weight matrices; extra is the
// footprint beyond the weights themselves.
std::pair<std::int64_t, std::int64_t> net_memory(const DenseNet& net,
                                                 const std::string& method,
                                                 const TrainConfig& cfg) {
  const int rank = method == "lsp"    ? cfg.r
                   : method == "full" ? 0
                                      : cfg.baseline_rank;
  std::int64_t total = 0;
  std::int64_t extra = 0;
  for (const DenseLayer& layer : net.layers) {
    MemoryEstimate est = memory_estimate(memory_method(method), layer.w.rows(),
                                         layer.w.cols(), rank, 2);
    total += est.total;
    extra += est.total - est.weight_count;
  }
  return {total, extra};
}

// Gradient matrices of one layer recorded along a plain SGD trajectory; the
// drift keeps later gradients off the initial distribution so heldout splits
// are meaningful.
std::vector<Matrix> collect_gradient_corpus(DenseNet& net, const TaskData& data,
                                            int steps, double lr, int layer,
                                            int batch_size, std::uint64_t seed) {
  if (steps < 1) throw ConfigError("collect_steps must be positive");
  if (layer < 0 || layer >= static_cast<int>(net.layers.size())) {
    throw ConfigError("layer index out of range for the configured net");
  }
  const int n_train = data.train.inputs.rows();
  std::vector<Matrix> corpus;
  corpus.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    Batch b = select_rows(data.train, batch_indices(seed, s, n_train, batch_size));
    auto [loss, cache] = forward(net, b);
    (void)loss;
    std::vector<Matrix> grads = backward(net, cache);
    corpus.push_back(grads[static_cast<std::size_t>(layer)]);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      net.layers[l].w -= lr * grads[l];
    }
  }
  return corpus;
}

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<std::string> policy;
  std::optional<std::string> profile;
  std::optional<int> d;
  std::optional<int> r;
  std::optional<double> alpha;
  std::optional<int> check_freq;
  std::optional<int> iters;
  bool identity_proj = false;
};

json load_config(const CliOptions& o, std::string* text_out) {
  if (o.config_path.empty()) {
    if (text_out) text_out->clear();
    return json::object();
  }
  std::string text = read_file(o.config_path);
  json doc = parse_json_text(text, o.config_path);
  if (text_out) *text_out = std::move(text);
  return doc;
}

void apply_common_overrides(json& doc, const CliOptions& o) {
  if (o.seed) doc["seed"] = *o.seed;
  if (o.out) doc["out"] = *o.out;
}

void apply_train_overrides(json& doc, const CliOptions& o) {
  apply_common_overrides(doc, o);
  if (o.method) doc["method"] = *o.method;
  if (o.d) doc["train"]["d"] = *o.d;
  if (o.r) doc["train"]["r"] = *o.r;
  if (o.alpha) doc["train"]["alpha"] = *o.alpha;
  if (o.check_freq) doc["train"]["check_freq"] = *o.check_freq;
  if (o.identity_proj) doc["train"]["identity_proj"] = true;
}

int cmd_train(const CliOptions& o) {
  std::string config_text;
  json doc = load_config(o, &config_text);
  apply_train_overrides(doc, o);
  JsonView top(doc, "config", {"seed", "out", "method", "task", "train"});
  const std::uint64_t seed = top.get_seed("seed", 0);
  const std::string out = top.get_string("out", "");
  const std::string method = top.get_string("method", "lsp");
  if (method != "lsp") parse_baseline(method);
  json task_obj = section(doc, "task");
  json train_obj = section(doc, "train");
  SyntheticTask task_spec = parse_task(task_obj);
  TrainConfig cfg = parse_train_config(train_obj);

  const fs::path dir = prepare_run_dir(out);
  task_spec.seed = derive_seed(seed, kTagTask);
  cfg.seed = derive_seed(seed, kTagTrain);
  TaskData data = make_task(task_spec);
  DenseNet net = make_net(task_spec.n_in, task_spec.n_hidden, task_spec.n_out,
                          task_spec.n_layers, task_spec.activation,
                          loss_for(task_spec.kind), derive_seed(seed, kTagNet));

  TrainHistory h = method == "lsp"
                       ? train_lsp(net, data, cfg)
                       : train_baseline(parse_baseline(method), net, data, cfg);

  write_history_csv(h, dir / "history.csv");
  write_final_weights(net, dir / "final_weights.csv");
  write_text(dir / "results.json", history_results(h).dump(2) + "\n");
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.config_path.empty()) inputs.emplace_back(o.config_path, config_text);
  write_metadata(dir, "train", seed, doc, inputs);

  std::cout << "method=" << method << " total_steps=" << cfg.total_steps
            << " final_train_loss="
            << (h.steps.empty() ? "none" : format_double(h.steps.back().train_loss))
            << " final_eval_loss=" << format_double(h.final_eval)
            << " refreshes=" << h.refresh_steps.size()
            << " aborted=" << (h.aborted ? 1 : 0) << "\n";
  if (h.aborted) {
    std::cerr << "numeric abort: " << h.abort_reason << "\n";
    return 3;
  }
  return 0;
}

int cmd_fit(const CliOptions& o) {
  std::string config_text;
  json doc = load_config(o, &config_text);
  apply_common_overrides(doc, o);
  if (o.d) doc["d"] = *o.d;
  if (o.r) doc["r"] = *o.r;
  JsonView top(doc, "config",
               {"seed", "out", "task", "collect_steps", "collect_lr", "layer",
                "batch_size", "d", "r", "fit"});
  const std::uint64_t seed = top.get_seed("seed", 0);
  const std::string out = top.get_string("out", "");
  const int collect_steps = top.get_int("collect_steps", 32);
  const double collect_lr = top.get_double("collect_lr", 1e-2);
  const int layer = top.get_int("layer", 0);
  const int batch_size = top.get_int("batch_size", 32);
  const int d = top.get_int("d", 32);
  const int r = top.get_int("r", 4);
  json task_obj = section(doc, "task");
  SyntheticTask task_spec = parse_task(task_obj);
  FitConfig fit_cfg;
  if (top.has("fit")) fit_cfg = parse_fit_config(top.raw("fit"), fit_cfg, "fit");
  fit_cfg.seed = derive_seed(seed, kTagFit);

  const fs::path dir = prepare_run_dir(out);
  task_spec.seed = derive_seed(seed, kTagTask);
  TaskData data = make_task(task_spec);
  DenseNet net = make_net(task_spec.n_in, task_spec.n_hidden, task_spec.n_out,
                          task_spec.n_layers, task_spec.activation,
                          loss_for(task_spec.kind), derive_seed(seed, kTagNet));
  std::vector<Matrix> corpus =
      collect_gradient_corpus(net, data, collect_steps, collect_lr, layer,
                              batch_size, derive_seed(seed, kTagCollect));

  const int m = corpus.front().rows();
  const int n = corpus.front().cols();
  ProjectorPair pair0{init_sparse(m, d, r, derive_seed(seed, kTagProjP)),
                      init_sparse(n, d, r, derive_seed(seed, kTagProjQ)), 0};
  auto [pair, report] = fit(pair0, corpus, fit_cfg);

  std::ofstream curve(dir / "fit_curve.csv", std::ios::binary);
  curve << "step,loss\n";
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
    curve << i << ',' << format_double(report.loss_curve[i]) << '\n';
  }
  curve.flush();
  if (!curve) throw IoError("write failed on fit_curve.csv");

  json rep;
  rep["m"] = m;
  rep["n"] = n;
  rep["d"] = d;
  rep["r"] = r;
  rep["targets"] = corpus.size();
  rep["final_rel_bias"] = report.final_rel_bias;
  rep["success"] = report.success;
  rep["timed_out"] = report.timed_out;
  rep["stalled"] = report.stalled;
  rep["steps"] = report.steps;
  write_text(dir / "fit_report.json", rep.dump(2) + "\n");

  std::ofstream pf(dir / "projector_p.txt", std::ios::binary);
  save_projector(pair.p, pf);
  std::ofstream qf(dir / "projector_q.txt", std::ios::binary);
  save_projector(pair.q, qf);
  if (!pf || !qf) throw IoError("write failed on projector files");

  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.config_path.empty()) inputs.emplace_back(o.config_path, config_text);
  write_metadata(dir, "fit", seed, doc, inputs);

  std::cout << "fit d=" << d << " r=" << r << " targets=" << corpus.size()
            << " steps=" << report.steps
            << " final_rel_bias=" << format_double(report.final_rel_bias)
            << " success=" << (report.success ? 1 : 0)
            << " timed_out=" << (report.timed_out ? 1 : 0) << "\n";
  return 0;
}

int cmd_bias_bench(const CliOptions& o) {
  std::string config_text;
  json doc = load_config(o, &config_text);
  apply_common_overrides(doc, o);
  JsonView top(doc, "config",
               {"seed", "out", "task", "collect_steps", "collect_lr", "layer",
                "batch_size", "grid_d", "grid_r", "galore_ranks", "fit"});
  const std::uint64_t seed = top.get_seed("seed", 0);
  const std::string out = top.get_string("out", "");
  const int collect_steps = top.get_int("collect_steps", 32);
  const double collect_lr = top.get_double("collect_lr", 1e-2);
  const int layer = top.get_int("layer", 0);
  const int batch_size = top.get_int("batch_size", 32);
  std::vector<int> grid_d = top.get_int_list("grid_d");
  std::vector<int> grid_r = top.get_int_list("grid_r");
  std::vector<int> galore_ranks = top.get_int_list("galore_ranks");
  if (grid_d.empty() || grid_r.empty()) {
    throw ConfigError("grid_d and grid_r must be non-empty arrays");
  }
  if (collect_steps < 2) {
    throw ConfigError("collect_steps must be at least 2 so a heldout split exists");
  }
  json task_obj = section(doc, "task");
  SyntheticTask task_spec = parse_task(task_obj);
  FitConfig fit_base;
  if (top.has("fit")) fit_base = parse_fit_config(top.raw("fit"), fit_base, "fit");

  const fs::path dir = prepare_run_dir(out);
  task_spec.seed = derive_seed(seed, kTagTask);
  TaskData data = make_task(task_spec);
  DenseNet net = make_net(task_spec.n_in, task_spec.n_hidden, task_spec.n_out,
                          task_spec.n_layers, task_spec.activation,
                          loss_for(task_spec.kind), derive_seed(seed, kTagNet));
  std::vector<Matrix> corpus =
      collect_gradient_corpus(net, data, collect_steps, collect_lr, layer,
                              batch_size, derive_seed(seed, kTagCollect));
  const std::size_t split = corpus.size() - corpus.size() / 2;
  const std::vector<Matrix> train_targets(corpus.begin(),
                                          corpus.begin() + static_cast<std::ptrdiff_t>(split));
  const std::vector<Matrix> heldout(corpus.begin() + static_cast<std::ptrdiff_t>(split),
                                    corpus.end());
  const int m = corpus.front().rows();
  const int n = corpus.front().cols();
  const std::int64_t weight_count = static_cast<std::int64_t>(m) * n;

  std::ostringstream csv;
  csv << "method,d,r,extra_memory,train_bias,heldout_bias\n";
  std::size_t rows = 0;

  {
    MemoryEstimate est = memory_estimate(MemoryMethod::kFull, m, n, 0, 2);
    csv << "full," << m << ",0," << est.total - weight_count << ",0,0\n";
    ++rows;
  }
  std::uint64_t pair_index = 0;
  for (int d : grid_d) {
    for (int r : grid_r) {
      ProjectorPair pair0{
          init_sparse(m, d, r, derive_seed(seed, kTagProjP, pair_index)),
          init_sparse(n, d, r, derive_seed(seed, kTagProjQ, pair_index)), 0};
      ++pair_index;
      FitConfig fit_cfg = fit_base;
      fit_cfg.seed = derive_seed(seed, kTagFit, pair_index);
      auto [pair, report] = fit(pair0, train_targets, fit_cfg);
      double held_bias = 0.0;
      for (const Matrix& g : heldout) held_bias += relative_bias(pair, g);
      held_bias /= static_cast<double>(heldout.size());
      MemoryEstimate est = memory_estimate(MemoryMethod::kLsp, m, n, r, 2);
      csv << "lsp," << d << ',' << r << ',' << est.total - weight_count << ','
          << format_double(report.final_rel_bias) << ','
          << format_double(held_bias) << '\n';
      ++rows;
    }
  }
  if (!galore_ranks.empty()) {
    Matrix mean_grad(m, n, 0.0);
    for (const Matrix& g : train_targets) mean_grad += g;
    mean_grad *= 1.0 / static_cast<double>(train_targets.size());
    for (int rank : galore_ranks) {
      GaloreProjection proj = galore_project(mean_grad, rank);
      double train_bias = 0.0;
      for (const Matrix& g : train_targets) {
        train_bias += galore_relative_bias(proj.p, g);
      }
      train_bias /= static_cast<double>(train_targets.size());
      double held_bias = 0.0;
      for (const Matrix& g : heldout) held_bias += galore_relative_bias(proj.p, g);
      held_bias /= static_cast<double>(heldout.size());
      MemoryEstimate est = memory_estimate(MemoryMethod::kGalore, m, n, rank, 2);
      csv << "galore,0," << rank << ',' << est.total - weight_count << ','
          << format_double(train_bias) << ',' << format_double(held_bias) << '\n';
      ++rows;
    }
  }

  write_text(dir / "bias_bench.csv", csv.str());
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.config_path.empty()) inputs.emplace_back(o.config_path, config_text);
  write_metadata(dir, "bias-bench", seed, doc, inputs);

  std::cout << "bias-bench rows=" << rows << " corpus=" << corpus.size()
            << " layer=" << layer << "\n";
  return 0;
}

int cmd_sim(const CliOptions& o) {
  std::string config_text;
  json doc = load_config(o, &config_text);
  apply_common_overrides(doc, o);
  if (o.profile) doc["profile"] = *o.profile;
  if (o.policy) doc["policy"] = *o.policy;
  if (o.d) doc["d"] = *o.d;
  if (o.iters) doc["iters"] = *o.iters;
  JsonView top(doc, "config", {"out", "profile", "policy", "d", "iters"});
  const std::string out = top.get_string("out", "");
  const std::string profile_path = top.get_string("profile", "");
  const std::string policy_str = top.get_string("policy", "");
  if (profile_path.empty()) throw ConfigError("profile not set; pass --profile");
  if (policy_str.empty()) throw ConfigError("policy not set; pass --policy");
  const Policy policy = parse_policy(policy_str);
  const int iters = top.get_int("iters", 8);
  std::optional<int> d;
  if (top.has("d")) d = top.get_int("d", 0);

  const std::string profile_text = read_file(profile_path);
  TimingProfile profile = load_profile(profile_path);
  const fs::path dir = prepare_run_dir(out);

  TimingProfile sim_profile = profile;
  json closed = nullptr;
  json rel_gap = nullptr;
  json tl = nullptr;
  if (policy == Policy::kLspLayerwise) {
    if (!d) {
      throw ConfigError("policy lsp_layerwise requires the subspace size d; pass --d");
    }
    sim_profile = lsp_rescale(profile, *d);
    closed = closed_form_lsp(profile, *d);
    tl = transition_layer(sim_profile);
  } else {
    if (d) throw ConfigError("d applies only to policy lsp_layerwise");
    if (policy == Policy::kZero || policy == Policy::kZeroDelayed) {
      closed = closed_form_zero(profile);
    }
  }

  ScheduleTrace t = simulate(sim_profile, policy, iters);
  save_trace_csv(t, (dir / "trace.csv").string());

  if (!closed.is_null()) {
    rel_gap = std::abs(closed.get<double>() - t.iter_time) / t.iter_time;
  }
  json summary;
  summary["policy"] = policy_name(policy);
  summary["profile"] = profile_path;
  summary["n_layers"] = sim_profile.n_layers;
  summary["iters"] = iters;
  summary["d"] = d ? json(*d) : json();
  summary["iter_time"] = t.iter_time;
  summary["makespan"] = t.makespan;
  summary["busy_per_iter"] = {{"gpu", t.busy_per_iter[kResGpu]},
                              {"cpu", t.busy_per_iter[kResCpu]},
                              {"d2h", t.busy_per_iter[kResD2h]},
                              {"h2d", t.busy_per_iter[kResH2d]}};
  summary["utilization"] = {{"gpu", t.busy_per_iter[kResGpu] / t.iter_time},
                            {"cpu", t.busy_per_iter[kResCpu] / t.iter_time},
                            {"d2h", t.busy_per_iter[kResD2h] / t.iter_time},
                            {"h2d", t.busy_per_iter[kResH2d] / t.iter_time}};
  summary["closed_form"] = closed;
  summary["closed_form_rel_gap"] = rel_gap;
  summary["transition_layer"] = tl;
  summary["min_communication_bytes"] = min_communication(sim_profile);
  summary["link_traffic_bytes_per_iter"] =
      t.busy_per_iter[kResD2h] * sim_profile.bandwidth_d2h +
      t.busy_per_iter[kResH2d] * sim_profile.bandwidth_h2d;
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.config_path.empty()) inputs.emplace_back(o.config_path, config_text);
  inputs.emplace_back(profile_path, profile_text);
  write_metadata(dir, "sim", std::nullopt, doc, inputs);

  std::cout << "policy=" << policy_name(policy) << " iters=" << iters
            << " iter_time=" << format_double(t.iter_time)
            << " makespan=" << format_double(t.makespan) << " closed_form="
            << (closed.is_null() ? "none" : format_double(closed.get<double>()))
            << " rel_gap="
            << (rel_gap.is_null() ? "none" : format_double(rel_gap.get<double>()))
            << "\n";
  return 0;
}

int thread_cap() {
  const char* env = std::getenv("LSP_KIT_THREADS");
  if (env == nullptr) {
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }
  int value = 0;
  const char* end = env + std::string_view(env).size();
  auto [ptr, ec] = std::from_chars(env, end, value);
  if (ec != std::errc() || ptr != end || value < 1) {
    throw ConfigError("LSP_KIT_THREADS must be a positive integer");
  }
  return value;
}

int cmd_compare(const CliOptions& o) {
  std::string config_text;
  json doc = load_config(o, &config_text);
  apply_common_overrides(doc, o);
  JsonView top(doc, "config", {"seed", "out", "task", "train", "runs"});
  const std::uint64_t seed = top.get_seed("seed", 0);
  const std::string out = top.get_string("out", "");
  json task_obj = section(doc, "task");
  json train_obj = section(doc, "train");
  SyntheticTask task_spec = parse_task(task_obj);
  TrainConfig base_cfg = parse_train_config(train_obj);
  if (!top.has("runs") || !top.raw("runs").is_array() || top.raw("runs").empty()) {
    throw ConfigError("runs must be a non-empty array");
  }

  struct RunSpec {
    std::string name;
    std::string method;
    TrainConfig cfg;
  };
  std::vector<RunSpec> runs;
  for (const json& rj : top.raw("runs")) {
    JsonView rv(rj, "runs[]",
                {"name", "method", "d", "r", "alpha", "check_freq",
                 "baseline_rank", "identity_proj", "fit_enabled"});
    RunSpec spec;
    spec.name = rv.get_string("name", "");
    if (spec.name.empty() ||
        spec.name.find_first_not_of(
            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-") !=
            std::string::npos) {
      throw ConfigError(
          "runs[].name must be non-empty and use only [A-Za-z0-9_-]");
    }
    for (const RunSpec& prev : runs) {
      if (prev.name == spec.name) {
        throw ConfigError("duplicate run name \"" + spec.name + "\"");
      }
    }
    spec.method = rv.get_string("method", "lsp");
    if (spec.method != "lsp") parse_baseline(spec.method);
    spec.cfg = base_cfg;
    spec.cfg.d = rv.get_int("d", spec.cfg.d);
    spec.cfg.r = rv.get_int("r", spec.cfg.r);
    spec.cfg.alpha = rv.get_double("alpha", spec.cfg.alpha);
    spec.cfg.check_freq = rv.get_int("check_freq", spec.cfg.check_freq);
    spec.cfg.baseline_rank = rv.get_int("baseline_rank", spec.cfg.baseline_rank);
    spec.cfg.identity_proj = rv.get_bool("identity_proj", spec.cfg.identity_proj);
    spec.cfg.fit_enabled = rv.get_bool("fit_enabled", spec.cfg.fit_enabled);
    spec.cfg.seed = derive_seed(seed, kTagTrain);
    runs.push_back(std::move(spec));
  }

  const fs::path dir = prepare_run_dir(out);
  task_spec.seed = derive_seed(seed, kTagTask);
  const TaskData data = make_task(task_spec);
  const std::uint64_t net_seed = derive_seed(seed, kTagNet);

  std::vector<std::string> rows(runs.size());
  std::vector<std::string> summaries(runs.size());
  std::vector<bool> aborted(runs.size(), false);
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      try {
        const RunSpec& spec = runs[i];
        DenseNet net = make_net(task_spec.n_in, task_spec.n_hidden,
                                task_spec.n_out, task_spec.n_layers,
                                task_spec.activation, loss_for(task_spec.kind),
                                net_seed);
        TrainHistory h =
            spec.method == "lsp"
                ? train_lsp(net, data, spec.cfg)
                : train_baseline(parse_baseline(spec.method), net, data, spec.cfg);
        const fs::path sub = dir / spec.name;
        std::error_code ec;
        fs::create_directories(sub, ec);
        if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
        write_history_csv(h, sub / "history.csv");
        write_text(sub / "results.json", history_results(h).dump(2) + "\n");
        const auto [mem_total, mem_extra] = net_memory(net, spec.method, spec.cfg);
        const int d_col = spec.method == "lsp" ? spec.cfg.d : 0;
        const int r_col = spec.method == "lsp"    ? spec.cfg.r
                          : spec.method == "full" ? 0
                                                  : spec.cfg.baseline_rank;
        std::ostringstream row;
        row << spec.name << ',' << spec.method << ',' << d_col << ',' << r_col
            << ','
            << (h.steps.empty() ? "" : format_double(h.steps.back().train_loss))
            << ',' << format_double(h.final_eval) << ','
            << h.refresh_steps.size() << ',' << mem_total << ',' << mem_extra
            << '\n';
        rows[i] = row.str();
        std::ostringstream line;
        line << "run=" << spec.name << " method=" << spec.method
             << " final_train_loss="
             << (h.steps.empty() ? "none" : format_double(h.steps.back().train_loss))
             << " final_eval_loss=" << format_double(h.final_eval)
             << " aborted=" << (h.aborted ? 1 : 0) << "\n";
        summaries[i] = line.str();
        aborted[i] = h.aborted;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers =
      std::min<int>(thread_cap(), static_cast<int>(runs.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ostringstream csv;
  csv << "name,method,d,r,final_train_loss,final_eval_loss,refreshes,"
         "memory_total,memory_extra\n";
  for (const std::string& row : rows) csv << row;
  write_text(dir / "compare.csv", csv.str());
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.config_path.empty()) inputs.emplace_back(o.config_path, config_text);
  write_metadata(dir, "compare", seed, doc, inputs);

  for (const std::string& line : summaries) std::cout << line;
  std::cout << "compare runs=" << runs.size() << " out=" << out << "\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (aborted[i]) {
      std::cerr << "numeric abort in run " << runs[i].name << "\n";
      return 3;
    }
  }
  return 0;
}

int run_app(int argc, char** argv) {
  CLI::App app{
      "learned sparse-projector training and offload-schedule simulation"};
  app.require_subcommand(1);
  CliOptions o;

  CLI::App* train = app.add_subcommand(
      "train", "train a toy model and write history/weights artifacts");
  train->add_option("--config", o.config_path, "run config JSON")->required();
  train->add_option("--seed", o.seed, "master seed override");
  train->add_option("--out", o.out, "run directory override");
  train->add_option("--method", o.method, "lsp | full | galore | lora");
  train->add_option("--d", o.d, "subspace size override");
  train->add_option("--r", o.r, "nonzeros per projector row override");
  train->add_option("--alpha", o.alpha, "refresh threshold override");
  train->add_option("--check-freq", o.check_freq, "check frequency override");
  train->add_flag("--identity-proj", o.identity_proj,
                  "use exact identity projectors (square layers only)");

  CLI::App* fitc = app.add_subcommand(
      "fit", "fit one projector pair to a collected gradient corpus");
  fitc->add_option("--config", o.config_path, "run config JSON")->required();
  fitc->add_option("--seed", o.seed, "master seed override");
  fitc->add_option("--out", o.out, "run directory override");
  fitc->add_option("--d", o.d, "subspace size override");
  fitc->add_option("--r", o.r, "nonzeros per projector row override");

  CLI::App* bench = app.add_subcommand(
      "bias-bench", "sweep projector sizes against a gradient corpus");
  bench->add_option("--config", o.config_path, "run config JSON")->required();
  bench->add_option("--seed", o.seed, "master seed override");
  bench->add_option("--out", o.out, "run directory override");

  CLI::App* sim = app.add_subcommand(
      "sim", "simulate an offload schedule on a timing profile");
  sim->add_option("--config", o.config_path, "run config JSON (optional)");
  sim->add_option("--profile", o.profile, "timing profile JSON");
  sim->add_option("--policy", o.policy,
                  "zero | zero_delayed | swap_only | lsp_layerwise");
  sim->add_option("--d", o.d, "subspace size for lsp_layerwise");
  sim->add_option("--iters", o.iters, "iterations to simulate");
  sim->add_option("--out", o.out, "run directory");

  CLI::App* compare = app.add_subcommand(
      "compare", "train several methods on one task and merge the reports");
  compare->add_option("--config", o.config_path, "run config JSON")->required();
  compare->add_option("--seed", o.seed, "master seed override");
  compare->add_option("--out", o.out, "run directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (train->parsed()) return cmd_train(o);
  if (fitc->parsed()) return cmd_fit(o);
  if (bench->parsed()) return cmd_bias_bench(o);
  if (sim->parsed()) return cmd_sim(o);
  if (compare->parsed()) return cmd_compare(o);
  return 2;
}

}  // namespace
}  // namespace lsp

int main(int argc, char** argv) {
  try {
    return lsp::run_app(argc, argv);
  } catch (const lsp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lsp::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const lsp::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
