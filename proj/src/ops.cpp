// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace sparsemix {

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, LayerNormCache* cache) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: gamma/beta extent does not match last axis " + std::to_string(d));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  if (cache) {
    cache->normalized = Tensor(x.shape());
    cache->inv_std = Tensor({rows});
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (in[j] - mean) * inv_std;
      out[r * d + j] = xhat * gamma[j] + beta[j];
      if (cache) cache->normalized[r * d + j] = xhat;
    }
    if (cache) cache->inv_std[r] = inv_std;
  }
  return out;
}

Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, const Tensor& gamma, Tensor& dgamma,
                           Tensor& dbeta) {
  require_same_shape(dy, cache.normalized, "layer_norm_backward");
  const std::size_t d = dy.shape().back();
  const std::size_t rows = dy.numel() / d;
  Tensor dx(dy.shape());
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy[r * d + j];
      const double xhat = cache.normalized[r * d + j];
      dgamma[j] += g * xhat;
      dbeta[j] += g;
      dxhat[j] = g * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    const double inv_std = cache.inv_std[r];
    for (std::size_t j = 0; j < d; ++j)
      dx[r * d + j] = inv_std * (dxhat[j] - mean_dxhat - cache.normalized[r * d + j] * mean_dxhat_xhat);
  }
  return dx;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t len = x.shape()[axis];
  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= sum;
    }
  }
  return out;
}

Tensor softmax_rows_backward(const Tensor& probs, const Tensor& dprobs) {
  require_same_shape(probs, dprobs, "softmax_rows_backward");
  const std::size_t c = probs.cols();
  Tensor dx(probs.shape());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double inner = 0.0;
    for (std::size_t j = 0; j < c; ++j) inner += probs.at(r, j) * dprobs.at(r, j);
    for (std::size_t j = 0; j < c; ++j) dx.at(r, j) = probs.at(r, j) * (dprobs.at(r, j) - inner);
  }
  return dx;
}

Tensor logsumexp_rows(const Tensor& x) {
  const std::size_t c = x.cols();
  Tensor out({x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x.at(r, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(x.at(r, j) - mx);
    out[r] = mx + std::log(sum);
  }
  return out;
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.vec()) v = gelu(v);
  return out;
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Tensor mask(shape);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.vec()) v = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

double cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels, Tensor* dlogits,
                          double grad_scale, std::size_t* correct) {
  const std::size_t rows = logits.rows(), c = logits.cols();
  if (labels.size() != rows) throw ShapeError("cross_entropy_rows: one label per row required");
  if (dlogits) *dlogits = Tensor(logits.shape());
  if (rows == 0) return 0.0;
  const Tensor lse = logsumexp_rows(logits);
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= c) throw ShapeError("cross_entropy_rows: label out of range");
    total += lse[r] - logits.at(r, labels[r]);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(r, j) > logits.at(r, best)) best = j;
    if (best == labels[r]) ++hits;
    if (dlogits) {
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(logits.at(r, j) - lse[r]);
        dlogits->at(r, j) = grad_scale * (p - (j == labels[r] ? 1.0 : 0.0)) / static_cast<double>(rows);
      }
    }
  }
  if (correct) *correct = hits;
  return total / static_cast<double>(rows);
}

}  // namespace sparsemix
