// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparsemix/attention.hpp"
#include "sparsemix/config.hpp"
#include "sparsemix/ffn.hpp"
#include "sparsemix/moe.hpp"
#include "sparsemix/ops.hpp"
#include "sparsemix/params.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

struct MlmTarget {
  std::size_t example = 0;
  std::size_t position = 0;
  std::size_t label = 0;
  bool operator==(const MlmTarget&) const = default;
};

/// Row-major [batch × seq_len] token data plus pre-training labels.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> input_ids;
  std::vector<std::size_t> type_ids;
  std::vector<double> mask;
  std::vector<MlmTarget> mlm;
  std::vector<std::size_t> nsp_labels;

  std::size_t num_tokens() const noexcept { return batch_size * seq_len; }
  std::span<const double> example_mask(std::size_t b) const {
    return std::span<const double>(mask).subspan(b * seq_len, seq_len);
  }
  /// Throws ShapeError / std::out_of_range when inconsistent with `cfg`.
  void validate(const ModelConfig& cfg) const;
  bool operator==(const Batch&) const = default;
};

/// Uniform random tokens with round(mlm_rate · n) (at least one) MLM targets per
/// example; used for timing and shape checks.
Batch uniform_batch(const ModelConfig& cfg, std::size_t batch_size, std::uint64_t seed, double mlm_rate = 0.15);

/// Fresh parameters for `cfg`: truncated-normal matrices, zero biases, unit LN gains.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Names of the mixing parameters a block of `kind` owns (without prefix).
std::vector<std::string> mixing_param_names(MixingKind kind);

struct BlockCache {
  Tensor input;
  std::vector<AttentionCache> attention;
  Tensor mix_dropout;
  LayerNormCache mix_ln;
  Tensor hidden;
  FeedForwardCache ffn;
  MoECache moe;
  Tensor mlp_dropout;
  LayerNormCache mlp_ln;
};

struct EmbedCache {
  LayerNormCache ln;
  Tensor dropout;
};

/// LN(word + position + type), dropout in train mode. Returns [b·n × d_m].
Tensor embed(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode, Rng* rng,
             EmbedCache* cache = nullptr);

/// One post-LN block over flattened tokens x [b·n × d_m]:
///   h = LN(x + drop(Mix(x))), y = LN(h + drop(Mlp(h))).
Tensor encoder_block(const Tensor& x, std::size_t layer, const ModelConfig& cfg, const ParamStore& params,
                     std::span<const double> mask, Mode mode, Rng* rng, AuxLosses* aux,
                     BlockCache* cache = nullptr);

Tensor encoder_block_backward(const Tensor& dy, std::size_t layer, const ModelConfig& cfg, const ParamStore& params,
                              const BlockCache& cache, ParamStore& grads);

struct EncoderOutput {
  Tensor sequence;  // [b, n, d_m]
  Tensor pooled;    // [b, d_m]
  AuxLosses aux;
};

/// Dropout is applied only when mode is Train and `rng` is given.
EncoderOutput forward_encoder(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode,
                              Rng* rng = nullptr);

struct LossReport {
  double total = 0.0;
  double mlm = 0.0;
  double nsp = 0.0;
  double lb = 0.0;
  double z = 0.0;
  std::size_t mlm_correct = 0;
  std::size_t mlm_count = 0;
  std::size_t nsp_correct = 0;
  std::size_t nsp_count = 0;

  double mlm_accuracy() const { return mlm_count ? double(mlm_correct) / double(mlm_count) : 0.0; }
  double nsp_accuracy() const { return nsp_count ? double(nsp_correct) / double(nsp_count) : 0.0; }
};

/// total = mlm + nsp + lb + z. When `grads` is given it receives dtotal/dθ
/// (accumulated; callers zero it).
LossReport pretrain_loss(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode,
                         Rng* rng = nullptr, ParamStore* grads = nullptr);

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer_kind(std::string_view name);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-6);

  void step(ParamStore& params, const ParamStore& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ParamStore m_, v_;
};

}  // namespace sparsemix
