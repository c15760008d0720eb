// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/attention.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "sparsemix/ops.hpp"

namespace sparsemix {
namespace {

std::string join(std::string_view prefix, std::string_view name) {
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

Tensor project(const Tensor& x, const ParamStore& params, std::string_view prefix, std::string_view w,
               std::string_view b) {
  Tensor out = matmul(x, params.at(join(prefix, w)));
  add_row_bias(out, params.at(join(prefix, b)));
  return out;
}

}  // namespace

void init_attention(ParamStore& params, const std::string& prefix, std::size_t d_m, double init_std,
                    const Rng& rng) {
  for (const char* proj : {"q", "k", "v", "o"}) {
    params.add_normal(join(prefix, std::string("w_") + proj), {d_m, d_m}, init_std, rng);
    params.add(join(prefix, std::string("b_") + proj), Tensor({d_m}));
  }
}

Tensor self_attention(const Tensor& x, const ParamStore& params, std::string_view prefix, std::size_t num_heads,
                      std::span<const double> mask, double dropout_rate, Rng* rng, AttentionCache* cache) {
  if (x.rank() != 2) throw ShapeError("self_attention: expected (n, d_m) input");
  const std::size_t n = x.rows(), d = x.cols();
  if (num_heads == 0 || d % num_heads != 0)
    throw ConfigError("self_attention: d_m " + std::to_string(d) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  if (mask.size() != n) throw ShapeError("self_attention: mask length must equal sequence length");
  bool any_valid = false;
  for (double m : mask) any_valid = any_valid || m != 0.0;
  if (!any_valid) throw std::invalid_argument("self_attention: every position is masked");

  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = project(x, params, prefix, "w_q", "b_q");
  // b_k shifts each score row by a constant, which the softmax cancels.
  Tensor k = matmul(x, params.at(join(prefix, "w_k")));
  Tensor v = project(x, params, prefix, "w_v", "b_v");
  Tensor context({n, d});
  std::vector<Tensor> all_probs, all_masks;
  const bool drop = rng && dropout_rate > 0.0;

  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t c0 = h * dh;
    Tensor scores({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = q.data().data() + i * d + c0;
      for (std::size_t j = 0; j < n; ++j) {
        if (mask[j] == 0.0) {
          scores.at(i, j) = -std::numeric_limits<double>::infinity();
          continue;
        }
        const double* kj = k.data().data() + j * d + c0;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        scores.at(i, j) = acc * scale;
      }
    }
    Tensor probs = softmax(scores, 1);
    Tensor used = probs;
    Tensor dmask;
    if (drop) {
      dmask = dropout_mask(probs.shape(), dropout_rate, *rng);
      used = hadamard(probs, dmask);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = context.data().data() + i * d + c0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = used.at(i, j);
        if (p == 0.0) continue;
        const double* vj = v.data().data() + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) ci[c] += p * vj[c];
      }
    }
    if (cache) {
      all_probs.push_back(std::move(probs));
      all_masks.push_back(std::move(dmask));
    }
  }
  Tensor out = project(context, params, prefix, "w_o", "b_o");
  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(all_probs);
    cache->dropout_masks = std::move(all_masks);
    cache->context = std::move(context);
  }
  return out;
}

Tensor self_attention_backward(const Tensor& dy, const AttentionCache& cache, const ParamStore& params,
                               std::string_view prefix, std::size_t num_heads, ParamStore& grads) {
  const std::size_t n = dy.rows(), d = dy.cols();
  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  accumulate_col_sums(dy, grads.at(join(prefix, "b_o")));
  grads.at(join(prefix, "w_o")) += matmul_tn(cache.context, dy);
  const Tensor dcontext = matmul_nt(dy, params.at(join(prefix, "w_o")));

  Tensor dq({n, d}), dk({n, d}), dv({n, d});
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t c0 = h * dh;
    const Tensor& probs = cache.probs[h];
    const Tensor& dmask = cache.dropout_masks[h];
    const bool dropped = dmask.numel() > 0;

    Tensor dused({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      const double* gi = dcontext.data().data() + i * d + c0;
      for (std::size_t j = 0; j < n; ++j) {
        const double* vj = cache.v.data().data() + j * d + c0;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
        dused.at(i, j) = acc;
        const double p = dropped ? probs.at(i, j) * dmask.at(i, j) : probs.at(i, j);
        if (p == 0.0) continue;
        double* dvj = dv.data().data() + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * gi[c];
      }
    }
    if (dropped) dused = hadamard(dused, dmask);
    const Tensor dscores = softmax_rows_backward(probs, dused);
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = cache.q.data().data() + i * d + c0;
      double* dqi = dq.data().data() + i * d + c0;
      for (std::size_t j = 0; j < n; ++j) {
        const double g = dscores.at(i, j) * scale;
        if (g == 0.0) continue;
        const double* kj = cache.k.data().data() + j * d + c0;
        double* dkj = dk.data().data() + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) {
          dqi[c] += g * kj[c];
          dkj[c] += g * qi[c];
        }
      }
    }
  }

  Tensor dx({n, d});
  const std::pair<const Tensor*, const char*> parts[] = {{&dq, "q"}, {&dk, "k"}, {&dv, "v"}};
  for (const auto& [grad, name] : parts) {
    if (grad != &dk) accumulate_col_sums(*grad, grads.at(join(prefix, std::string("b_") + name)));
    grads.at(join(prefix, std::string("w_") + name)) += matmul_tn(cache.input, *grad);
    dx += matmul_nt(*grad, params.at(join(prefix, std::string("w_") + name)));
  }
  return dx;
}

}  // namespace sparsemix
