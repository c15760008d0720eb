// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsemix/config.hpp"

namespace sparsemix {

/// Exact trainable-scalar count, from closed-form shapes.
std::size_t count_params(const ModelConfig& cfg);

/// Trainable scalars of one block, excluding embeddings and heads.
std::size_t count_block_params(const ModelConfig& cfg, std::size_t layer);

struct FlopsOptions {
  /// Fraction of positions that carry an MLM prediction.
  double mlm_rate = 0.15;
  /// Count the one-hot dispatch and combine contractions of each MoE sublayer.
  bool count_dispatch = true;
};

struct FlopsEstimate {
  double total = 0.0;
  /// Keys: attention, mixing, dense_mlp, moe_experts, moe_router, moe_dispatch, mlm_head, pooler_nsp.
  std::map<std::string, double> breakdown;
};

/// Forward FLOPs per example of `seq_len` tokens; a multiply-add counts as 2.
FlopsEstimate estimate_flops(const ModelConfig& cfg, std::size_t seq_len, const FlopsOptions& opts = {});

/// FLOPs of one mixing sublayer over an [n × d_m] sequence.
double mixing_flops(MixingKind kind, std::size_t n, std::size_t d_m);

struct HardwareInfo {
  std::string cpu;
  std::size_t threads = 1;
  std::string compiler;
};

HardwareInfo detect_hardware();

struct TimingOptions {
  bool forward_only = false;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
};

struct TimingResult {
  double median_ms = 0.0;
  std::vector<double> samples_ms;
  std::size_t batch_size = 0;
  std::size_t reps = 0;
  bool forward_only = false;
  HardwareInfo hardware;
};

/// Median wall-clock of `reps` post-warmup steps (full train steps unless
/// forward_only). Halves the batch on allocation failure and reports the
/// batch actually used. Throws ConfigError when reps < 5.
TimingResult time_step(const ModelConfig& cfg, std::size_t batch_size, std::size_t reps,
                       const TimingOptions& opts = {});

struct CostReport {
  std::size_t param_count = 0;
  double flops_per_example = 0.0;
  std::map<std::string, double> breakdown;
  std::optional<TimingResult> timing;
};

CostReport cost_report(const ModelConfig& cfg, std::size_t seq_len, const FlopsOptions& opts = {});

nlohmann::json to_json(const HardwareInfo& hw);
nlohmann::json to_json(const TimingResult& t);
/// {params, gflops_est, ms_per_batch, breakdown}; ms_per_batch is null when untimed.
nlohmann::json to_json(const CostReport& c);

}  // namespace sparsemix
