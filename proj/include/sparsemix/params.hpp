// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sparsemix/rng.hpp"
#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// "blocks.<layer>.<sublayer>.<name>"
std::string block_param_name(std::size_t layer, std::string_view sublayer, std::string_view name);

/// Named parameter tensors. Iteration order is lexicographic by name, which
/// fixes every traversal (initialization, optimizer updates, sampling).
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  Tensor& add(std::string name, Tensor value);
  /// Adds a truncated-normal(0, stddev, ±2σ) tensor drawn from a stream keyed by name.
  Tensor& add_normal(std::string name, Shape shape, double stddev, const Rng& rng);

  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::size_t layer, std::string_view sublayer, std::string_view name);
  const Tensor& at(std::size_t layer, std::string_view sublayer, std::string_view name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t numel() const noexcept;
  std::vector<std::string> names() const;

  Map::iterator begin() noexcept { return tensors_.begin(); }
  Map::iterator end() noexcept { return tensors_.end(); }
  Map::const_iterator begin() const noexcept { return tensors_.begin(); }
  Map::const_iterator end() const noexcept { return tensors_.end(); }

  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;
  void set_zero();
  /// this += scale * other, name by name.
  void axpy(double scale, const ParamStore& other);
  bool all_finite() const;

  /// Subset of tensors whose names start with `prefix`.
  ParamStore subset(std::string_view prefix) const;

  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

  bool operator==(const ParamStore& other) const = default;

 private:
  Map tensors_;
};

/// A loss over a parameter store. When `grads` is non-null the callee must
/// accumulate dLoss/dθ into it (same names and shapes as the params).
using LossFn = std::function<double(const ParamStore& params, ParamStore* grads)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t samples = 0;
};

/// Compares the analytic gradient of `loss` with central differences at
/// `samples` randomly chosen scalars (tensor picked uniformly, then an entry
/// uniformly). Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. Throws DivergedError if the loss is non-finite.
GradCheckResult finite_diff_grad_check(const LossFn& loss, const ParamStore& params, double eps,
                                       std::size_t samples, std::uint64_t seed = 0);

}  // namespace sparsemix
