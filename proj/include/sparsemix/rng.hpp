// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

namespace sparsemix {

/// Counter-based generator: draw i of a stream is splitmix64(seed, i), so the
/// sequence depends only on the seed and the number of draws taken. All value
/// transforms are implemented here rather than through <random> distributions,
/// whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent stream keyed by (seed, stream_id).
  Rng fork(std::uint64_t stream_id) const noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n) noexcept;
  double normal() noexcept;
  /// Normal(0, stddev) resampled until |x| <= bound_stddevs * stddev.
  double truncated_normal(double stddev, double bound_stddevs = 2.0) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// Stateless mix of several words; used for hash-keyed lookups.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace sparsemix
