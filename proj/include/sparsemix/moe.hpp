// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "sparsemix/ffn.hpp"
#include "sparsemix/ops.hpp"
#include "sparsemix/params.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

enum class RouterKind { TokensChoose, ExpertsChoose };

std::string_view to_string(RouterKind kind) noexcept;
RouterKind parse_router_kind(std::string_view name);

struct MoEConfig {
  std::size_t num_experts = 16;
  double cf_train = 1.0;
  double cf_eval = 1.0;
  std::size_t group_size = 4096;
  RouterKind router_kind = RouterKind::ExpertsChoose;
  bool bpr = true;
  double lb_loss_coef = 0.01;
  double z_loss_coef = 1e-4;
  std::size_t expert_d_ff = 2048;
  double expert_dropout = 0.1;

  /// Throws ConfigError on E < 1, cf <= 0, g < 1 or expert_d_ff < 1.
  void validate() const;
  bool operator==(const MoEConfig&) const = default;
};

/// ceil(cf * n_group / E), never below 1.
std::size_t expert_capacity(double cf, std::size_t n_group, std::size_t num_experts);

inline constexpr std::size_t kDropped = std::numeric_limits<std::size_t>::max();

/// Outcome of routing one group of tokens.
struct RouterDecision {
  RouterKind kind = RouterKind::TokensChoose;
  std::size_t num_tokens = 0;
  std::size_t num_experts = 0;
  std::size_t capacity = 0;
  /// Experts processing each token, in ascending expert order; {kDropped} when none.
  std::vector<std::vector<std::size_t>> assignment;
  /// Per expert, the admitted tokens in slot order and their combine weights.
  std::vector<std::vector<std::size_t>> expert_tokens;
  std::vector<std::vector<double>> combine_weight;
  std::vector<std::size_t> expert_load;
  double aux_lb_loss = 0.0;
  double aux_z_loss = 0.0;

  bool is_dropped(std::size_t token) const;
};

/// logits = x_group · w_router, softmax over experts.
Tensor router_logits(const Tensor& x_group, const Tensor& w_router);
Tensor router_probs(const Tensor& x_group, const Tensor& w_router);

/// Top-1 routing with per-expert capacity. Tokens are admitted in index order,
/// or in descending top-probability order when `bpr` is set (ties go to the
/// lower token index). aux_lb_loss = lb_coef · E · Σ_e f_e · P_e.
RouterDecision tokens_choose_top1(const Tensor& probs, std::size_t capacity, bool bpr, double lb_coef = 0.01);

/// Each expert takes its `capacity` highest-probability tokens (ties go to the
/// lower token index). Loads always equal capacity; aux_lb_loss is 0.
RouterDecision experts_choose(const Tensor& probs, std::size_t capacity);

/// z_coef · mean over tokens of logsumexp(logits)².
double router_z_loss(const Tensor& logits, double z_coef);

struct AuxLosses {
  double lb = 0.0;
  double z = 0.0;
  AuxLosses& operator+=(const AuxLosses& o) {
    lb += o.lb;
    z += o.z;
    return *this;
  }
};

struct MoEGroupCache {
  std::size_t begin = 0;
  Tensor input;
  Tensor probs;
  Tensor lse;
  RouterDecision decision;
  std::vector<FeedForwardCache> expert_cache;
  std::vector<Tensor> expert_output;
};

struct MoECache {
  std::vector<MoEGroupCache> groups;
  std::size_t num_tokens = 0;
};

/// Parameters: `<prefix>.router` (d_m, E) and `<prefix>.experts.<e>.{w_in,b_in,w_out,b_out}`.
void init_moe(ParamStore& params, const std::string& prefix, std::size_t d_m, const MoEConfig& cfg,
              double init_std, const Rng& rng);

/// Routes the rows of `x` (all tokens of a batch, flattened) in contiguous
/// groups of `group_size`; the final group may be shorter and gets its own
/// capacity. Tokens routed nowhere produce zero output rows.
Tensor moe_sublayer(const Tensor& x, const MoEConfig& cfg, const ParamStore& params, std::string_view prefix,
                    Mode mode, Rng* rng, AuxLosses* aux, MoECache* cache = nullptr);

/// Backward through experts, combine weights, router softmax and (scaled by
/// `aux_grad_scale`) the auxiliary losses. Returns dL/dx.
Tensor moe_sublayer_backward(const Tensor& dy, const MoECache& cache, const MoEConfig& cfg,
                             const ParamStore& params, std::string_view prefix, ParamStore& grads,
                             double aux_grad_scale = 1.0);

}  // namespace sparsemix
