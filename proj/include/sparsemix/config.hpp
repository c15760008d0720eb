// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sparsemix/mixing.hpp"
#include "sparsemix/moe.hpp"

namespace sparsemix {

enum class MlpKind { Dense, MoE };

std::string_view to_string(MlpKind kind) noexcept;
MlpKind parse_mlp_kind(std::string_view name);

struct BlockSpec {
  MixingKind mixing = MixingKind::Linear;
  MlpKind mlp = MlpKind::Dense;
  bool operator==(const BlockSpec&) const = default;
};

/// Where a run of k special blocks sits in an L-block stack (0 = bottom).
///   Top      final k blocks
///   Bottom   first k blocks
///   Middle   contiguous run starting at floor((L - k) / 2)
///   Mixed    every ceil(L/k)-th block starting at block 0
///   MixedOdd every ceil(L/k)-th block starting at block 1
enum class Placement { Top, Bottom, Middle, Mixed, MixedOdd };

std::string_view to_string(Placement p) noexcept;
Placement parse_placement(std::string_view name);

/// Block indices chosen by `placement`; throws ConfigError when infeasible.
std::vector<std::size_t> placement_indices(std::size_t num_layers, std::size_t count, Placement placement);

/// Attention blocks get SelfAttention mixing, all others `mixing`; MoE blocks
/// get a sparse MLP. The two placements are independent and may overlap.
std::vector<BlockSpec> build_layout(std::size_t num_layers, std::size_t attention_count,
                                    Placement attention_layout, std::size_t moe_count, Placement moe_layout,
                                    MixingKind mixing = MixingKind::Linear);

/// Declarative form of build_layout's arguments, kept in the config so that
/// overriding num_layers or a count regenerates the blocks.
struct LayoutSpec {
  MixingKind mixing = MixingKind::Linear;
  std::size_t attention_count = 0;
  Placement attention_layout = Placement::Top;
  std::size_t moe_count = 0;
  Placement moe_layout = Placement::Middle;
  bool operator==(const LayoutSpec&) const = default;
};

struct ModelConfig {
  std::string name = "custom";
  std::size_t num_layers = 0;
  std::size_t d_m = 0;
  std::size_t d_ff = 0;
  std::size_t num_heads = 1;
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::size_t type_vocab = 2;
  std::vector<BlockSpec> blocks;
  std::optional<LayoutSpec> layout;
  MoEConfig moe;
  double dropout = 0.1;
  double attention_dropout = 0.1;
  double ln_eps = 1e-12;
  double init_std = 0.02;
  std::string precision = "double";

  /// Regenerates `blocks` from `layout` when a layout is present.
  void resolve_blocks();
  /// Throws ConfigError when any structural invariant fails.
  void validate() const;

  std::size_t count_blocks(MixingKind mixing) const;
  std::size_t count_blocks(MlpKind mlp) const;
  bool has_moe() const { return count_blocks(MlpKind::MoE) > 0; }

  bool operator==(const ModelConfig&) const = default;
};

/// Presets: bert-base, sparse-mixer-base, fast-sparse-mixer,
/// bert-L{2,4,4b,8,18,24}, sm-L{2,4,4b,8,18,24} and the tiny-* family.
ModelConfig build_preset(std::string_view name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const ModelConfig& cfg);
/// Reads every present key over `base`; a present `layout` rebuilds blocks.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});
nlohmann::json to_json(const MoEConfig& cfg);
MoEConfig moe_config_from_json(const nlohmann::json& j, const MoEConfig& base = {});

}  // namespace sparsemix
