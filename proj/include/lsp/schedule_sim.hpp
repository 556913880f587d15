// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_SCHEDULE_SIM_HPP_
#define LSP_SCHEDULE_SIM_HPP_

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace lsp {

// Offload pipeline policies.
//   kSwapOnly:     all compute on the device; parameter and optimizer state
//                  beyond device memory is swapped out and back every
//                  iteration.
//   kZero:         host optimizer update; forward, then backward overlapped
//                  with gradient offload, then host update overlapped with
//                  delta upload; next forward waits for all deltas.
//   kZeroDelayed:  like kZero but the host update for step t overlaps the
//                  device compute of step t+1; forward of step t+2 waits on
//                  its applied deltas.
//   kLspLayerwise: per-layer offload/update/upload/apply chains running
//                  concurrently with device compute on both links; forward of
//                  layer l in the next iteration waits only on that layer's
//                  apply.
enum class Policy { kSwapOnly, kZero, kZeroDelayed, kLspLayerwise };

enum Resource : int { kResGpu = 0, kResCpu = 1, kResD2h = 2, kResH2d = 3 };

// Per-layer timings in seconds, sizes in bytes, bandwidths in bytes/second.
// When duplex is false both transfer directions share one link (the d2h
// resource). The zero and zero_delayed schedules never overlap the two
// directions, so zero_delayed serializes them on one link regardless of the
// flag.
struct TimingProfile {
  int n_layers = 0;
  std::vector<double> fwd_gpu;
  std::vector<double> bwd_gpu;
  std::vector<double> upd_gpu;
  std::vector<double> fwd_cpu;
  std::vector<double> bwd_cpu;
  std::vector<double> upd_cpu;
  std::vector<double> grad_bytes;
  std::vector<double> delta_bytes;
  double bandwidth_d2h = 0.0;
  double bandwidth_h2d = 0.0;
  bool duplex = false;
  double mem_total = 0.0;
  double mem_gpu = 0.0;
  double bytes_per_element = 8.0;
};

struct TraceEvent {
  int resource = 0;
  std::string label;
  int layer = 0;
  int iter = 0;
  double start = 0.0;
  double end = 0.0;
  // Instant the task's dependencies were all met; start - ready is queueing.
  double ready = 0.0;
};

struct ScheduleTrace {
  std::vector<TraceEvent> events;
  double makespan = 0.0;
  // Steady-state seconds per iteration: the makespan for a single-iteration
  // run, the middle-window average (F(N-1) - F(1)) / (N-2) for N >= 3.
  double iter_time = 0.0;
  std::array<double, 4> busy_per_iter{};
  // Completion time of each iteration's last event.
  std::vector<double> iter_finish;
};

// Throws ConfigError on negative times/sizes, non-positive bandwidths or
// element width, size mismatches, or mem_gpu > mem_total.
void validate_profile(const TimingProfile& profile);

Policy parse_policy(const std::string& name);
std::string policy_name(Policy policy);

// Rescales the communication payload of every layer to a d x d compressed
// gradient (2 * d^2 * bytes_per_element per direction) and scales the host
// update time by the element-count ratio d^2 / (grad_bytes / bytes_per
// element). Device compute and apply times are unchanged.
TimingProfile lsp_rescale(const TimingProfile& profile, int d);

// Index of the deepest layer whose offload/update/upload round trip can
// block the first layer of the next forward pass, evaluated from per-layer
// mean times and clamped to [0, n_layers]. Layers l < n_layers - result are
// scheduled last-come-first-serve during the backward pass; the rest are
// first-come-first-serve.
double transition_layer(const TimingProfile& profile);

// T_FWD + max(T_BWD, T_d2h) + max(T_UPD, T_h2d), aggregates summed over
// layers. Ignores device apply time and pipeline fill, so it tracks the
// simulator to about one layer's cost per phase.
double closed_form_zero(const TimingProfile& profile);

// max of: full compute plus one layer's communication and host update,
// total offload time, total upload time, total host update time, all on the
// d-rescaled profile. With duplex off the two link terms collapse into
// their sum on the shared link.
double closed_form_lsp(const TimingProfile& profile, int d);

// Lower bound on bytes moved per iteration when device memory holds only
// mem_gpu of a mem_total working set: mem_total - mem_gpu.
double min_communication(const TimingProfile& profile);

// Deterministic discrete-event simulation of `iters` iterations.
// transition_override replaces the transition_layer heuristic for
// kLspLayerwise and is ignored by other policies.
ScheduleTrace simulate(const TimingProfile& profile, Policy policy, int iters,
                       std::optional<double> transition_override = std::nullopt);

// JSON profile document with exactly the TimingProfile fields; per-layer
// entries accept a scalar (uniform across layers) or an array of n_layers
// numbers. Unknown keys are rejected. Throws IoError on unreadable or
// unparseable files, ConfigError on schema or invariant violations.
TimingProfile load_profile(const std::string& path);

// CSV `resource,label,layer,start,end` rows in completion order, then a
// summary comment line with iter_time and makespan.
void save_trace_csv(const ScheduleTrace& trace, const std::string& path);

}  // namespace lsp

#endif  // LSP_SCHEDULE_SIM_HPP_
