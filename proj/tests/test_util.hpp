// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sparsemix/encoder.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

inline Batch random_batch(const ModelConfig& cfg, std::size_t batch_size, std::uint64_t seed,
                          std::size_t masked_per_example = 2) {
  Rng rng(seed);
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = cfg.seq_len;
  for (std::size_t e = 0; e < batch_size; ++e) {
    for (std::size_t p = 0; p < cfg.seq_len; ++p) {
      b.input_ids.push_back(rng.uniform_index(cfg.vocab_size));
      b.type_ids.push_back(p < cfg.seq_len / 2 ? 0 : 1);
      b.mask.push_back(1.0);
    }
    for (std::size_t k = 0; k < masked_per_example && k + 1 < cfg.seq_len; ++k)
      b.mlm.push_back({e, 1 + k, rng.uniform_index(cfg.vocab_size)});
    b.nsp_labels.push_back(rng.uniform_index(2));
  }
  return b;
}

}  // namespace sparsemix::testing
