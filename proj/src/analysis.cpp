// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <new>

#include "sparsemix/encoder.hpp"

namespace sparsemix {
namespace {

std::size_t mixing_param_count(MixingKind kind, std::size_t n, std::size_t d) {
  switch (kind) {
    case MixingKind::Linear:
      return n * n + d * d;
    case MixingKind::Toeplitz:
      return (2 * n - 1) + (2 * d - 1);
    case MixingKind::Circulant:
      return n + d;
    case MixingKind::SelfAttention:
      return 4 * d * d + 4 * d;
    case MixingKind::Fourier:
    case MixingKind::Hartley:
      return 0;
  }
  return 0;
}

std::size_t ffn_param_count(std::size_t d, std::size_t d_ff) { return 2 * d * d_ff + d_ff + d; }

}  // namespace

std::size_t count_block_params(const ModelConfig& cfg, std::size_t layer) {
  const BlockSpec& b = cfg.blocks.at(layer);
  const std::size_t d = cfg.d_m;
  std::size_t total = mixing_param_count(b.mixing, cfg.seq_len, d) + 4 * d;
  if (b.mlp == MlpKind::Dense)
    total += ffn_param_count(d, cfg.d_ff);
  else
    total += d * cfg.moe.num_experts + cfg.moe.num_experts * ffn_param_count(d, cfg.moe.expert_d_ff);
  return total;
}

std::size_t count_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_m, v = cfg.vocab_size;
  std::size_t total = v * d + cfg.seq_len * d + cfg.type_vocab * d + 2 * d;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) total += count_block_params(cfg, l);
  total += d * d + d;                   // pooler
  total += d * d + d + 2 * d + v;       // MLM transform, LN, output bias
  total += 2 * d + 2;                   // NSP
  return total;
}

double mixing_flops(MixingKind kind, std::size_t n, std::size_t d_m) {
  const double nn = double(n), d = double(d_m);
  if (kind == MixingKind::SelfAttention) return 8.0 * nn * d * d + 4.0 * nn * nn * d;
  return 2.0 * nn * nn * d + 2.0 * nn * d * d;
}

FlopsEstimate estimate_flops(const ModelConfig& cfg, std::size_t seq_len, const FlopsOptions& opts) {
  FlopsEstimate est;
  auto& br = est.breakdown;
  for (const char* key :
       {"attention", "mixing", "dense_mlp", "moe_experts", "moe_router", "moe_dispatch", "mlm_head", "pooler_nsp"})
    br[key] = 0.0;
  const double n = double(seq_len), d = double(cfg.d_m);
  for (const BlockSpec& b : cfg.blocks) {
    br[b.mixing == MixingKind::SelfAttention ? "attention" : "mixing"] += mixing_flops(b.mixing, seq_len, cfg.d_m);
    if (b.mlp == MlpKind::Dense) {
      br["dense_mlp"] += 4.0 * n * d * double(cfg.d_ff);
      continue;
    }
    const MoEConfig& m = cfg.moe;
    const double e = double(m.num_experts);
    const double cap = double(expert_capacity(m.cf_eval, m.group_size, m.num_experts));
    const double slots = e * cap * n / double(m.group_size);
    br["moe_experts"] += slots * 4.0 * d * double(m.expert_d_ff);
    br["moe_router"] += 2.0 * n * d * e;
    if (opts.count_dispatch) br["moe_dispatch"] += 2.0 * (2.0 * n * e * cap * d);
  }
  const double masked = opts.mlm_rate * n;
  br["mlm_head"] = masked * (2.0 * d * d + 2.0 * d * double(cfg.vocab_size));
  br["pooler_nsp"] = 2.0 * d * d + 2.0 * d * 2.0;
  for (const auto& [k, v] : br) est.total += v;
  return est;
}

HardwareInfo detect_hardware() {
  HardwareInfo hw;
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      hw.cpu = colon == std::string::npos ? line : line.substr(colon + 2);
      break;
    }
  }
  if (hw.cpu.empty()) hw.cpu = "unknown";
  hw.threads = 1;
#if defined(__clang__)
  hw.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  hw.compiler = "gcc " __VERSION__;
#else
  hw.compiler = "unknown";
#endif
  return hw;
}

TimingResult time_step(const ModelConfig& cfg, std::size_t batch_size, std::size_t reps, const TimingOptions& opts) {
  if (reps < 5) throw ConfigError("time_step needs at least 5 repetitions");
  if (batch_size == 0) throw ConfigError("time_step needs a positive batch size");
  const ParamStore initial = init_params(cfg, opts.seed);
  while (true) {
    try {
      ParamStore params = initial;
      const Batch batch = uniform_batch(cfg, batch_size, hash_combine(opts.seed, 0x7157));
      Optimizer opt(OptimizerKind::Sgd, 1e-3);
      Rng rng(hash_combine(opts.seed, 0xd209));
      ParamStore grads = params.zeros_like();
      TimingResult r;
      r.batch_size = batch_size;
      r.reps = reps;
      r.forward_only = opts.forward_only;
      r.hardware = detect_hardware();
      for (std::size_t i = 0; i < opts.warmup + reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        if (opts.forward_only) {
          pretrain_loss(batch, cfg, params, Mode::Eval);
        } else {
          grads.set_zero();
          pretrain_loss(batch, cfg, params, Mode::Train, &rng, &grads);
          opt.step(params, grads);
        }
        const auto t1 = std::chrono::steady_clock::now();
        if (i >= opts.warmup) r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      std::vector<double> sorted = r.samples_ms;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t mid = sorted.size() / 2;
      r.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
      return r;
    } catch (const std::bad_alloc&) {
      if (batch_size == 1) throw;
      batch_size /= 2;
    }
  }
}

CostReport cost_report(const ModelConfig& cfg, std::size_t seq_len, const FlopsOptions& opts) {
  CostReport c;
  c.param_count = count_params(cfg);
  FlopsEstimate f = estimate_flops(cfg, seq_len, opts);
  c.flops_per_example = f.total;
  c.breakdown = std::move(f.breakdown);
  return c;
}

nlohmann::json to_json(const HardwareInfo& hw) {
  return {{"cpu", hw.cpu}, {"threads", hw.threads}, {"compiler", hw.compiler}};
}

nlohmann::json to_json(const TimingResult& t) {
  return {{"median_ms", t.median_ms}, {"samples_ms", t.samples_ms}, {"batch_size", t.batch_size},
          {"reps", t.reps},           {"forward_only", t.forward_only}, {"hardware", to_json(t.hardware)}};
}

nlohmann::json to_json(const CostReport& c) {
  nlohmann::json breakdown = nlohmann::json::object();
  for (const auto& [k, v] : c.breakdown) breakdown[k] = v / 1e9;
  nlohmann::json j = {{"params", c.param_count},
                      {"gflops_est", c.flops_per_example / 1e9},
                      {"gflops_breakdown", breakdown},
                      {"ms_per_batch", nullptr}};
  if (c.timing) {
    j["ms_per_batch"] = c.timing->median_ms;
    j["timing"] = to_json(*c.timing);
  }
  return j;
}

}  // namespace sparsemix
