// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsemix/analysis.hpp"
#include "sparsemix/config.hpp"
#include "sparsemix/encoder.hpp"

namespace sparsemix {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kClsId = 1;
inline constexpr std::size_t kSepId = 2;
inline constexpr std::size_t kMaskId = 3;
inline constexpr std::size_t kFirstContentId = 4;

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t steps = 300;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  std::string precision = "double";
  std::size_t eval_batches = 4;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::size_t vocab_size = 128;
  std::size_t seq_len = 128;
  double mlm_mask_rate = 0.15;
  std::uint64_t corpus_seed = 1234;
  bool operator==(const DataConfig&) const = default;
};

struct OutputConfig {
  std::string report_path;
  std::string format = "json";
  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  std::string preset = "tiny-sparse-mixer";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  OutputConfig outputs;
  bool operator==(const RunConfig&) const = default;
};

/// Sets `key` (dot-separated path) in `doc` to `value`, which is parsed as
/// JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Resolves a run document {preset, model, train, data, outputs}: preset
/// defaults, then document values. The model takes its seq_len and
/// vocab_size from `data`. Throws ConfigError on unknown keys.
RunConfig resolve_run_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& run);
nlohmann::json load_json_file(const std::filesystem::path& path);

/// Order-2 Markov token source with NSP pairing and BERT-style masking.
class SyntheticCorpus {
 public:
  SyntheticCorpus(std::size_t vocab_size, std::uint64_t seed, std::size_t branching = 4, double follow_prob = 0.85);

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  /// Token i of document `doc`; content ids only.
  std::vector<std::size_t> document(std::uint64_t doc, std::size_t length) const;
  /// Successor candidates of the context (a, b), most likely first.
  std::vector<std::size_t> successors(std::size_t a, std::size_t b) const;

  /// [CLS] A [SEP] B [SEP]; B continues A (label 1) or comes from another
  /// document (label 0) with equal probability. 15% of content positions
  /// become MLM targets: 80% [MASK], 10% random token, 10% unchanged.
  Batch make_batch(std::size_t batch_size, std::size_t seq_len, double mask_rate, Rng& rng) const;

 private:
  std::size_t vocab_size_;
  std::uint64_t seed_;
  std::size_t branching_;
  double follow_prob_;
};

struct StepMetrics {
  std::size_t step = 0;
  double total = 0.0;
  double mlm = 0.0;
  double nsp = 0.0;
  double lb = 0.0;
  double z = 0.0;
  double mlm_accuracy = 0.0;
  double nsp_accuracy = 0.0;
  double ms = 0.0;
  bool eval = false;
  bool operator==(const StepMetrics&) const = default;
};

nlohmann::json to_json(const StepMetrics& m);

struct TrainReport {
  RunConfig run;
  std::vector<StepMetrics> metrics;  // one per training step, then the final eval entry
  StepMetrics final_eval;
  CostReport cost;
  HardwareInfo hardware;
  ParamStore params;
};

/// Runs the toy pre-training loop. A non-finite loss or gradient throws
/// DivergedError with the step; the parameters of the last good step are
/// saved to `checkpoint` when given.
TrainReport train_toy(const RunConfig& run, const std::optional<std::filesystem::path>& checkpoint = {});

/// {config, seed, hardware, metrics, cost}
nlohmann::json report_json(const TrainReport& report);

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

/// Plain gradient descent on one fixed batch with dropout off; returns the
/// total loss before each step and after the last.
std::vector<double> fixed_batch_descent(const ModelConfig& cfg, std::size_t steps, double lr, std::uint64_t seed,
                                        std::size_t batch_size = 4);

struct SweepVariant {
  std::string name;
  std::vector<std::string> overrides;  // key=value
};

/// Axis names: mixing, attention_count, attention_layout, moe_count,
/// moe_layout, num_experts, cf, group_size, d_m, d_ff, num_layers, router.
std::vector<SweepVariant> sweep_axis(const std::string& axis, const std::vector<std::string>& values);
std::vector<std::string> sweep_axis_names();

struct AblationRow {
  std::string name;
  std::size_t params = 0;
  double gflops_est = 0.0;
  double ms_per_batch = 0.0;
  double final_mlm_acc = 0.0;
  double final_nsp_acc = 0.0;
  std::string status = "ok";
};

inline constexpr const char* kAblationHeader = "name,params,gflops_est,ms_per_batch,final_mlm_acc,final_nsp_acc,status";

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Runs every variant from `base` with the shared seed and budget. A failing
/// variant gets an error status and the sweep continues. When `csv_path` is
/// given the table is rewritten atomically after each variant.
std::vector<AblationRow> ablate(const nlohmann::json& base, const std::vector<SweepVariant>& variants,
                                const std::optional<std::filesystem::path>& csv_path = {});

}  // namespace sparsemix
