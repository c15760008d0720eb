// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "sparsemix/params.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// Two-layer GELU MLP d_m -> d_ff -> d_m with parameters
/// `<prefix>.w_in` (d_m, d_ff), `.b_in`, `.w_out` (d_ff, d_m), `.b_out`.
struct FeedForwardCache {
  Tensor input;
  Tensor pre_activation;
  Tensor activation;  // after GELU and dropout
  Tensor dropout_mask;
};

void init_feed_forward(ParamStore& params, const std::string& prefix, std::size_t d_m, std::size_t d_ff,
                       double init_std, const Rng& rng);

/// Dropout with `dropout_rate` is applied to the hidden activation when `rng` is non-null.
Tensor feed_forward(const Tensor& x, const ParamStore& params, std::string_view prefix, double dropout_rate,
                    Rng* rng, FeedForwardCache* cache);

Tensor feed_forward_backward(const Tensor& dy, const FeedForwardCache& cache, const ParamStore& params,
                             std::string_view prefix, ParamStore& grads, double scale = 1.0);

}  // namespace sparsemix
