// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsemix/params.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// Multi-head scaled dot-product self-attention over one sequence (n, d_m).
/// Parameters live under `<prefix>.{w_q,b_q,w_k,b_k,w_v,b_v,w_o,b_o}` with
/// weights stored (in, out) so projections are x · W + b.
struct AttentionCache {
  Tensor input;
  Tensor q, k, v;
  std::vector<Tensor> probs;          // per head, pre-dropout (n, n)
  std::vector<Tensor> dropout_masks;  // per head, empty when dropout is off
  Tensor context;                     // concatenated heads before w_o
};

void init_attention(ParamStore& params, const std::string& prefix, std::size_t d_m, double init_std,
                    const Rng& rng);

/// `mask[j]` is 1 for valid key positions, 0 for padding. Masked keys receive
/// exactly zero attention weight. Dropout on attention probabilities is
/// applied when `rng` is non-null and `dropout_rate` > 0.
Tensor self_attention(const Tensor& x, const ParamStore& params, std::string_view prefix, std::size_t num_heads,
                      std::span<const double> mask, double dropout_rate = 0.0, Rng* rng = nullptr,
                      AttentionCache* cache = nullptr);

Tensor self_attention_backward(const Tensor& dy, const AttentionCache& cache, const ParamStore& params,
                               std::string_view prefix, std::size_t num_heads, ParamStore& grads);

}  // namespace sparsemix
