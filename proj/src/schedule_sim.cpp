// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsp/schedule_sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "lsp/common.hpp"
#include "lsp/matrix.hpp"

namespace lsp {
namespace {

constexpr int kNumResources = 4;

const char* kResourceNames[kNumResources] = {"gpu", "cpu", "d2h", "h2d"};

double vec_sum(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

struct Task {
  int resource = 0;
  const char* label = "";
  int layer = 0;
  int iter = 0;
  double duration = 0.0;
  bool lcfs = false;
  std::vector<int> deps;
};

class TaskGraph {
 public:
  int add(int resource, const char* label, int layer, int iter,
          double duration, std::vector<int> deps, bool lcfs = false) {
    Task t;
    t.resource = resource;
    t.label = label;
    t.layer = layer;
    t.iter = iter;
    t.duration = duration;
    t.lcfs = lcfs;
    t.deps = std::move(deps);
    tasks_.push_back(std::move(t));
    return static_cast<int>(tasks_.size()) - 1;
  }

  const std::vector<Task>& tasks() const { return tasks_; }

 private:
  std::vector<Task> tasks_;
};

// Non-idling dispatcher: each resource runs one task at a time, picking the
// front of its deque as soon as it is free. Completion ties break on
// (time, resource, task index) so runs are reproducible.
ScheduleTrace run_tasks(const std::vector<Task>& tasks, int iters) {
  const int n = static_cast<int>(tasks.size());
  std::vector<int> pending(n, 0);
  std::vector<std::vector<int>> dependents(n);
  for (int i = 0; i < n; ++i) {
    pending[i] = static_cast<int>(tasks[i].deps.size());
    for (int d : tasks[i].deps) dependents[d].push_back(i);
  }

  std::array<std::deque<int>, kNumResources> queue;
  std::array<int, kNumResources> running;
  running.fill(-1);
  std::vector<double> ready_at(n, 0.0);
  std::vector<double> started_at(n, 0.0);

  auto enqueue = [&](int i, double now) {
    ready_at[i] = now;
    if (tasks[i].lcfs) {
      queue[tasks[i].resource].push_front(i);
    } else {
      queue[tasks[i].resource].push_back(i);
    }
  };

  using Completion = std::tuple<double, int, int>;
  std::priority_queue<Completion, std::vector<Completion>,
                      std::greater<Completion>>
      upcoming;

  auto dispatch = [&](double now) {
    for (int r = 0; r < kNumResources; ++r) {
      if (running[r] >= 0 || queue[r].empty()) continue;
      int i = queue[r].front();
      queue[r].pop_front();
      running[r] = i;
      started_at[i] = now;
      upcoming.emplace(now + tasks[i].duration, r, i);
    }
  };

  for (int i = 0; i < n; ++i) {
    if (pending[i] == 0) enqueue(i, 0.0);
  }
  dispatch(0.0);

  ScheduleTrace trace;
  trace.iter_finish.assign(static_cast<std::size_t>(iters), 0.0);
  std::array<double, kNumResources> busy{};
  int completed = 0;
  while (!upcoming.empty()) {
    auto [now, r, i] = upcoming.top();
    upcoming.pop();
    running[r] = -1;
    ++completed;
    busy[r] += tasks[i].duration;
    trace.events.push_back(TraceEvent{r, tasks[i].label, tasks[i].layer,
                                      tasks[i].iter, started_at[i], now,
                                      ready_at[i]});
    trace.makespan = std::max(trace.makespan, now);
    double& fin = trace.iter_finish[static_cast<std::size_t>(tasks[i].iter)];
    fin = std::max(fin, now);
    for (int j : dependents[i]) {
      if (--pending[j] == 0) enqueue(j, now);
    }
    dispatch(now);
  }
  if (completed != n) throw NumericError("schedule deadlocked; dependency cycle");

  for (int r = 0; r < kNumResources; ++r) {
    trace.busy_per_iter[static_cast<std::size_t>(r)] = busy[static_cast<std::size_t>(r)] / iters;
  }
  if (iters == 1) {
    trace.iter_time = trace.makespan;
  } else if (iters == 2) {
    trace.iter_time = trace.iter_finish[1] - trace.iter_finish[0];
  } else {
    trace.iter_time = (trace.iter_finish[static_cast<std::size_t>(iters) - 2] -
                       trace.iter_finish[0]) /
                      (iters - 2);
  }
  return trace;
}

double offload_seconds(const TimingProfile& p, int l) {
  return p.grad_bytes[static_cast<std::size_t>(l)] / p.bandwidth_d2h;
}

double upload_seconds(const TimingProfile& p, int l) {
  return p.delta_bytes[static_cast<std::size_t>(l)] / p.bandwidth_h2d;
}

std::vector<int> build_zero(const TimingProfile& p, int iters, TaskGraph& g,
                            bool delayed) {
  const int L = p.n_layers;
  const int up_res = (!delayed && p.duplex) ? kResH2d : kResD2h;
  std::vector<int> fwd(static_cast<std::size_t>(L));
  std::vector<int> bwd(static_cast<std::size_t>(L));
  std::vector<int> off(static_cast<std::size_t>(L));
  std::vector<int> upd(static_cast<std::size_t>(L));
  std::vector<int> up(static_cast<std::size_t>(L));
  std::vector<int> apply(static_cast<std::size_t>(L));
  std::vector<int> prev_apply;
  std::vector<int> older_apply;
  int prev_bwd0 = -1;
  for (int t = 0; t < iters; ++t) {
    for (int l = 0; l < L; ++l) {
      std::vector<int> deps;
      if (l > 0) {
        deps.push_back(fwd[static_cast<std::size_t>(l) - 1]);
      } else if (delayed) {
        if (prev_bwd0 >= 0) deps.push_back(prev_bwd0);
        deps.insert(deps.end(), older_apply.begin(), older_apply.end());
      } else {
        deps = prev_apply;
      }
      fwd[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "fwd", l, t, p.fwd_gpu[static_cast<std::size_t>(l)], std::move(deps));
    }
    for (int l = L - 1; l >= 0; --l) {
      std::vector<int> deps = {l == L - 1 ? fwd[static_cast<std::size_t>(L) - 1]
                                          : bwd[static_cast<std::size_t>(l) + 1]};
      bwd[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "bwd", l, t, p.bwd_gpu[static_cast<std::size_t>(l)], std::move(deps));
      off[static_cast<std::size_t>(l)] =
          g.add(kResD2h, "off", l, t, offload_seconds(p, l),
                {bwd[static_cast<std::size_t>(l)]});
    }
    // The host update consumes the whole-model gradient, so every update
    // waits for every offload.
    std::vector<int> barrier(off.begin(), off.end());
    for (int l = 0; l < L; ++l) {
      upd[static_cast<std::size_t>(l)] =
          g.add(kResCpu, "upd", l, t, p.upd_cpu[static_cast<std::size_t>(l)], barrier);
      up[static_cast<std::size_t>(l)] =
          g.add(up_res, "up", l, t, upload_seconds(p, l),
                {upd[static_cast<std::size_t>(l)]});
      apply[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "apply", l, t, p.upd_gpu[static_cast<std::size_t>(l)],
                {up[static_cast<std::size_t>(l)]});
    }
    older_apply = prev_apply;
    prev_apply.assign(apply.begin(), apply.end());
    prev_bwd0 = bwd[0];
  }
  return prev_apply;
}

void build_swap_only(const TimingProfile& p, int iters, TaskGraph& g) {
  const int L = p.n_layers;
  const double swap_bytes = p.mem_total - p.mem_gpu;
  const int in_res = p.duplex ? kResH2d : kResD2h;
  std::vector<int> fwd(static_cast<std::size_t>(L));
  std::vector<int> upd(static_cast<std::size_t>(L));
  std::vector<int> prev_gate;
  int prev_out = -1;
  int prev_in = -1;
  for (int t = 0; t < iters; ++t) {
    int swap_out = g.add(kResD2h, "swap_out", -1, t,
                         swap_bytes / p.bandwidth_d2h,
                         prev_out >= 0 ? std::vector<int>{prev_out}
                                       : std::vector<int>{});
    int swap_in = g.add(in_res, "swap_in", -1, t,
                        swap_bytes / p.bandwidth_h2d,
                        prev_in >= 0 ? std::vector<int>{prev_in}
                                     : std::vector<int>{});
    for (int l = 0; l < L; ++l) {
      std::vector<int> deps;
      if (l > 0) {
        deps.push_back(fwd[static_cast<std::size_t>(l) - 1]);
      } else {
        deps = prev_gate;
      }
      fwd[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "fwd", l, t, p.fwd_gpu[static_cast<std::size_t>(l)], std::move(deps));
    }
    int prev = fwd[static_cast<std::size_t>(L) - 1];
    for (int l = L - 1; l >= 0; --l) {
      prev = g.add(kResGpu, "bwd", l, t, p.bwd_gpu[static_cast<std::size_t>(l)], {prev});
      upd[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "upd", l, t, p.upd_gpu[static_cast<std::size_t>(l)], {prev});
    }
    prev_gate.assign(upd.begin(), upd.end());
    prev_gate.push_back(swap_out);
    prev_gate.push_back(swap_in);
    prev_out = swap_out;
    prev_in = swap_in;
  }
}

void build_lsp_layerwise(const TimingProfile& p, int iters, double tl,
                         TaskGraph& g) {
  const int L = p.n_layers;
  const int up_res = p.duplex ? kResH2d : kResD2h;
  std::vector<int> fwd(static_cast<std::size_t>(L));
  std::vector<int> apply(static_cast<std::size_t>(L));
  std::vector<int> prev_apply;
  for (int t = 0; t < iters; ++t) {
    for (int l = 0; l < L; ++l) {
      std::vector<int> deps;
      if (l > 0) deps.push_back(fwd[static_cast<std::size_t>(l) - 1]);
      if (!prev_apply.empty()) deps.push_back(prev_apply[static_cast<std::size_t>(l)]);
      fwd[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "fwd", l, t, p.fwd_gpu[static_cast<std::size_t>(l)], std::move(deps));
    }
    int prev = fwd[static_cast<std::size_t>(L) - 1];
    for (int l = L - 1; l >= 0; --l) {
      const bool lcfs = static_cast<double>(l) < static_cast<double>(L) - tl;
      prev = g.add(kResGpu, "bwd", l, t, p.bwd_gpu[static_cast<std::size_t>(l)], {prev});
      int off = g.add(kResD2h, "off", l, t, offload_seconds(p, l), {prev}, lcfs);
      int upd = g.add(kResCpu, "upd", l, t, p.upd_cpu[static_cast<std::size_t>(l)],
                      {off}, lcfs);
      int up = g.add(up_res, "up", l, t, upload_seconds(p, l), {upd}, lcfs);
      apply[static_cast<std::size_t>(l)] =
          g.add(kResGpu, "apply", l, t, p.upd_gpu[static_cast<std::size_t>(l)], {up}, lcfs);
    }
    prev_apply.assign(apply.begin(), apply.end());
  }
}

void check_layer_vec(const std::vector<double>& v, int n_layers,
                     const char* name) {
  if (static_cast<int>(v.size()) != n_layers) {
    throw ConfigError(std::string(name) + " must have one entry per layer");
  }
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) {
      throw ConfigError(std::string(name) + " entries must be finite and non-negative");
    }
  }
}

std::vector<double> json_layer_vec(const nlohmann::json& doc, const char* key,
                                   int n_layers) {
  const nlohmann::json& node = doc.at(key);
  std::vector<double> out;
  if (node.is_number()) {
    out.assign(static_cast<std::size_t>(n_layers), node.get<double>());
  } else if (node.is_array()) {
    out = node.get<std::vector<double>>();
  } else {
    throw ConfigError(std::string(key) + " must be a number or an array");
  }
  return out;
}

}  // namespace

void validate_profile(const TimingProfile& p) {
  if (p.n_layers < 1) throw ConfigError("profile needs at least one layer");
  check_layer_vec(p.fwd_gpu, p.n_layers, "fwd_gpu");
  check_layer_vec(p.bwd_gpu, p.n_layers, "bwd_gpu");
  check_layer_vec(p.upd_gpu, p.n_layers, "upd_gpu");
  check_layer_vec(p.fwd_cpu, p.n_layers, "fwd_cpu");
  check_layer_vec(p.bwd_cpu, p.n_layers, "bwd_cpu");
  check_layer_vec(p.upd_cpu, p.n_layers, "upd_cpu");
  check_layer_vec(p.grad_bytes, p.n_layers, "grad_bytes");
  check_layer_vec(p.delta_bytes, p.n_layers, "delta_bytes");
  if (!std::isfinite(p.bandwidth_d2h) || p.bandwidth_d2h <= 0.0 ||
      !std::isfinite(p.bandwidth_h2d) || p.bandwidth_h2d <= 0.0) {
    throw ConfigError("bandwidths must be positive");
  }
  if (!std::isfinite(p.mem_total) || !std::isfinite(p.mem_gpu) ||
      p.mem_gpu < 0.0 || p.mem_total < p.mem_gpu) {
    throw ConfigError("memory sizes must satisfy 0 <= mem_gpu <= mem_total");
  }
  if (!std::isfinite(p.bytes_per_element) || p.bytes_per_element <= 0.0) {
    throw ConfigError("bytes_per_element must be positive");
  }
}

Policy parse_policy(const std::string& name) {
  if (name == "swap_only") return Policy::kSwapOnly;
  if (name == "zero") return Policy::kZero;
  if (name == "zero_delayed") return Policy::kZeroDelayed;
  if (name == "lsp_layerwise") return Policy::kLspLayerwise;
  throw ConfigError("unknown policy: " + name);
}

std::string policy_name(Policy policy) {
  switch (policy) {
    case Policy::kSwapOnly: return "swap_only";
    case Policy::kZero: return "zero";
    case Policy::kZeroDelayed: return "zero_delayed";
    case Policy::kLspLayerwise: return "lsp_layerwise";
  }
  throw ConfigError("unknown policy value");
}

TimingProfile lsp_rescale(const TimingProfile& profile, int d) {
  validate_profile(profile);
  if (d < 1) throw ConfigError("subspace dimension must be at least 1");
  TimingProfile out = profile;
  const double payload = 2.0 * static_cast<double>(d) * static_cast<double>(d) *
                         profile.bytes_per_element;
  for (int l = 0; l < profile.n_layers; ++l) {
    const std::size_t i = static_cast<std::size_t>(l);
    out.grad_bytes[i] = payload;
    out.delta_bytes[i] = payload;
    const double elems = profile.grad_bytes[i] / profile.bytes_per_element;
    if (elems > 0.0) {
      out.upd_cpu[i] = profile.upd_cpu[i] *
                       (static_cast<double>(d) * static_cast<double>(d)) / elems;
    }
  }
  return out;
}

double transition_layer(const TimingProfile& profile) {
  validate_profile(profile);
  const int L = profile.n_layers;
  const double t_bwd = vec_sum(profile.bwd_gpu);
  double t_off = 0.0;
  double t_up = 0.0;
  for (int l = 0; l < L; ++l) {
    t_off += offload_seconds(profile, l);
    t_up += upload_seconds(profile, l);
  }
  t_off /= L;
  t_up /= L;
  const double t_upd = vec_sum(profile.upd_cpu) / L;
  const double denom = std::max({t_off, t_up, t_upd});
  if (denom == 0.0) {
    // No per-layer pipeline cost: nothing can block when the backward pass is
    // also free, otherwise every layer is at risk.
    return t_bwd > 0.0 ? 0.0 : static_cast<double>(L);
  }
  const double raw =
      static_cast<double>(L) - (t_bwd - (t_off + t_up + t_upd)) / denom;
  return std::clamp(raw, 0.0, static_cast<double>(L));
}

double closed_form_zero(const TimingProfile& profile) {
  validate_profile(profile);
  const double t_fwd = vec_sum(profile.fwd_gpu);
  const double t_bwd = vec_sum(profile.bwd_gpu);
  const double t_upd = vec_sum(profile.upd_cpu);
  const double t_d2h = vec_sum(profile.grad_bytes) / profile.bandwidth_d2h;
  const double t_h2d = vec_sum(profile.delta_bytes) / profile.bandwidth_h2d;
  return t_fwd + std::max(t_bwd, t_d2h) + std::max(t_upd, t_h2d);
}

double closed_form_lsp(const TimingProfile& profile, int d) {
  const TimingProfile p = lsp_rescale(profile, d);
  const int L = p.n_layers;
  const double t_fwd = vec_sum(p.fwd_gpu);
  const double t_bwd = vec_sum(p.bwd_gpu);
  const double t_upd = vec_sum(p.upd_cpu);
  const double t_d2h = vec_sum(p.grad_bytes) / p.bandwidth_d2h;
  const double t_h2d = vec_sum(p.delta_bytes) / p.bandwidth_h2d;
  const double layer_comm = t_d2h / L + t_h2d / L;
  const double layer_upd = t_upd / L;
  const double pipelined = t_fwd + t_bwd + layer_comm + layer_upd;
  if (p.duplex) {
    return std::max({pipelined, t_d2h, t_h2d, t_upd});
  }
  return std::max({pipelined, t_d2h + t_h2d, t_upd});
}

double min_communication(const TimingProfile& profile) {
  validate_profile(profile);
  return profile.mem_total - profile.mem_gpu;
}

ScheduleTrace simulate(const TimingProfile& profile, Policy policy, int iters,
                       std::optional<double> transition_override) {
  validate_profile(profile);
  if (iters < 1) throw ConfigError("iters must be at least 1");
  TaskGraph g;
  switch (policy) {
    case Policy::kZero:
      build_zero(profile, iters, g, /*delayed=*/false);
      break;
    case Policy::kZeroDelayed:
      build_zero(profile, iters, g, /*delayed=*/true);
      break;
    case Policy::kSwapOnly:
      build_swap_only(profile, iters, g);
      break;
    case Policy::kLspLayerwise: {
      const double tl = transition_override.has_value()
                            ? std::clamp(*transition_override, 0.0,
                                         static_cast<double>(profile.n_layers))
                            : transition_layer(profile);
      build_lsp_layerwise(profile, iters, tl, g);
      break;
    }
  }
  return run_tasks(g.tasks(), iters);
}

TimingProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse profile " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("profile must be a JSON object");
  static const char* kKeys[] = {
      "n_layers",    "fwd_gpu",     "bwd_gpu",        "upd_gpu",
      "fwd_cpu",     "bwd_cpu",     "upd_cpu",        "grad_bytes",
      "delta_bytes", "bandwidth_d2h", "bandwidth_h2d", "duplex",
      "mem_total",   "mem_gpu",     "bytes_per_element"};
  for (const auto& item : doc.items()) {
    bool known = false;
    for (const char* k : kKeys) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown profile key: " + item.key());
  }
  TimingProfile p;
  try {
    p.n_layers = doc.at("n_layers").get<int>();
    if (p.n_layers < 1) throw ConfigError("n_layers must be positive");
    p.fwd_gpu = json_layer_vec(doc, "fwd_gpu", p.n_layers);
    p.bwd_gpu = json_layer_vec(doc, "bwd_gpu", p.n_layers);
    p.upd_gpu = json_layer_vec(doc, "upd_gpu", p.n_layers);
    p.fwd_cpu = json_layer_vec(doc, "fwd_cpu", p.n_layers);
    p.bwd_cpu = json_layer_vec(doc, "bwd_cpu", p.n_layers);
    p.upd_cpu = json_layer_vec(doc, "upd_cpu", p.n_layers);
    p.grad_bytes = json_layer_vec(doc, "grad_bytes", p.n_layers);
    p.delta_bytes = json_layer_vec(doc, "delta_bytes", p.n_layers);
    p.bandwidth_d2h = doc.at("bandwidth_d2h").get<double>();
    p.bandwidth_h2d = doc.at("bandwidth_h2d").get<double>();
    p.duplex = doc.at("duplex").get<bool>();
    p.mem_total = doc.at("mem_total").get<double>();
    p.mem_gpu = doc.at("mem_gpu").get<double>();
    p.bytes_per_element = doc.at("bytes_per_element").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad profile " + path + ": " + e.what());
  }
  validate_profile(p);
  return p;
}

void save_trace_csv(const ScheduleTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace output: " + path);
  out << "resource,label,layer,start,end\n";
  for (const TraceEvent& e : trace.events) {
    out << kResourceNames[e.resource] << ',' << e.label << ',' << e.layer
        << ',' << format_double(e.start) << ',' << format_double(e.end)
        << '\n';
  }
  out << "# iter_time=" << format_double(trace.iter_time)
      << " makespan=" << format_double(trace.makespan) << '\n';
  if (!out) throw IoError("cannot write trace output: " + path);
}

}  // namespace lsp
