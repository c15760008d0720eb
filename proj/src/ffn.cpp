// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/ffn.hpp"

#include "sparsemix/ops.hpp"

namespace sparsemix {
namespace {

std::string join(std::string_view prefix, std::string_view name) {
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

}  // namespace

void init_feed_forward(ParamStore& params, const std::string& prefix, std::size_t d_m, std::size_t d_ff,
                       double init_std, const Rng& rng) {
  params.add_normal(join(prefix, "w_in"), {d_m, d_ff}, init_std, rng);
  params.add(join(prefix, "b_in"), Tensor({d_ff}));
  params.add_normal(join(prefix, "w_out"), {d_ff, d_m}, init_std, rng);
  params.add(join(prefix, "b_out"), Tensor({d_m}));
}

Tensor feed_forward(const Tensor& x, const ParamStore& params, std::string_view prefix, double dropout_rate,
                    Rng* rng, FeedForwardCache* cache) {
  Tensor pre = matmul(x, params.at(join(prefix, "w_in")));
  add_row_bias(pre, params.at(join(prefix, "b_in")));
  Tensor act = gelu(pre);
  Tensor mask;
  if (rng && dropout_rate > 0.0) {
    mask = dropout_mask(act.shape(), dropout_rate, *rng);
    act = hadamard(act, mask);
  }
  Tensor out = matmul(act, params.at(join(prefix, "w_out")));
  add_row_bias(out, params.at(join(prefix, "b_out")));
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
    cache->activation = std::move(act);
    cache->dropout_mask = std::move(mask);
  }
  return out;
}

Tensor feed_forward_backward(const Tensor& dy, const FeedForwardCache& cache, const ParamStore& params,
                             std::string_view prefix, ParamStore& grads, double scale) {
  Tensor g = dy;
  if (scale != 1.0) g *= scale;
  accumulate_col_sums(g, grads.at(join(prefix, "b_out")));
  grads.at(join(prefix, "w_out")) += matmul_tn(cache.activation, g);
  Tensor dact = matmul_nt(g, params.at(join(prefix, "w_out")));
  if (cache.dropout_mask.numel() > 0) dact = hadamard(dact, cache.dropout_mask);
  for (std::size_t i = 0; i < dact.numel(); ++i) dact[i] *= gelu_grad(cache.pre_activation[i]);
  accumulate_col_sums(dact, grads.at(join(prefix, "b_in")));
  grads.at(join(prefix, "w_in")) += matmul_tn(cache.input, dact);
  return matmul_nt(dact, params.at(join(prefix, "w_in")));
}

}  // namespace sparsemix
