// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// Train mode enables dropout and uses the training capacity factor.
enum class Mode { Train, Eval };

struct LayerNormCache {
  Tensor normalized;  // (x - mean) / sqrt(var + eps), per row
  Tensor inv_std;     // one entry per row
};

/// Normalizes each position over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache = nullptr);

/// Returns dL/dx and accumulates dL/dgamma, dL/dbeta.
Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, const Tensor& gamma, Tensor& dgamma,
                           Tensor& dbeta);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Backward of a softmax over the last axis of a rank-2 tensor, given its output.
Tensor softmax_rows_backward(const Tensor& probs, const Tensor& dprobs);
/// log Σ exp over each row of a rank-2 tensor.
Tensor logsumexp_rows(const Tensor& x);

double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;
Tensor gelu(const Tensor& x);

/// Inverted dropout mask: entries are 0 or 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

/// Mean cross-entropy of rows of `logits` against integer labels. When `dlogits`
/// is non-null it receives d(mean loss)/d(logits) scaled by `grad_scale`.
double cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels, Tensor* dlogits,
                          double grad_scale = 1.0, std::size_t* correct = nullptr);

}  // namespace sparsemix
