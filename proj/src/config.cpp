// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/config.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <utility>

namespace sparsemix {
namespace {

using nlohmann::json;

constexpr std::array<std::pair<Placement, std::string_view>, 5> kPlacementNames{{
    {Placement::Top, "TOP"},
    {Placement::Bottom, "BOTTOM"},
    {Placement::Middle, "MIDDLE"},
    {Placement::Mixed, "MIXED"},
    {Placement::MixedOdd, "MIXED-odd"},
}};

struct ScalingRow {
  const char* suffix;
  std::size_t bert_layers, bert_d_m;
  std::size_t sm_layers, sm_d_m, attention, moe, experts;
};

// Scaling ladder; d_ff = 4 d_m and heads = d_m / 64 throughout.
constexpr std::array<ScalingRow, 6> kScaling{{
    {"L2", 2, 256, 2, 256, 2, 2, 16},
    {"L4", 4, 256, 4, 256, 2, 2, 16},
    {"L4b", 4, 512, 4, 512, 2, 2, 16},
    {"L8", 8, 512, 8, 512, 4, 4, 16},
    {"L18", 18, 768, 18, 768, 6, 6, 32},
    {"L24", 24, 1024, 24, 1024, 6, 6, 64},
}};

ModelConfig base_shape(std::string name, std::size_t layers, std::size_t d_m, std::size_t d_ff) {
  ModelConfig c;
  c.name = std::move(name);
  c.num_layers = layers;
  c.d_m = d_m;
  c.d_ff = d_ff;
  c.num_heads = std::max<std::size_t>(1, d_m / 64);
  c.seq_len = 512;
  c.vocab_size = 32000;
  c.moe.expert_d_ff = d_ff;
  return c;
}

ModelConfig bert(std::string name, std::size_t layers, std::size_t d_m) {
  ModelConfig c = base_shape(std::move(name), layers, d_m, 4 * d_m);
  c.layout = LayoutSpec{MixingKind::Linear, layers, Placement::Top, 0, Placement::Middle};
  c.resolve_blocks();
  return c;
}

ModelConfig sparse_mixer(std::string name, std::size_t layers, std::size_t d_m, std::size_t attention,
                         std::size_t moe, std::size_t experts) {
  ModelConfig c = base_shape(std::move(name), layers, d_m, 4 * d_m);
  c.moe.num_experts = experts;
  c.moe.router_kind = RouterKind::ExpertsChoose;
  c.layout = LayoutSpec{MixingKind::Linear, attention, Placement::Top, moe, Placement::Middle};
  c.resolve_blocks();
  return c;
}

ModelConfig tiny(std::string name, LayoutSpec layout) {
  ModelConfig c;
  c.name = std::move(name);
  c.num_layers = 2;
  c.d_m = 32;
  c.d_ff = 64;
  c.num_heads = 2;
  c.seq_len = 8;
  c.vocab_size = 64;
  c.moe.num_experts = 2;
  c.moe.expert_d_ff = 64;
  c.layout = layout;
  c.resolve_blocks();
  return c;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

json layout_to_json(const LayoutSpec& l) {
  return json{{"mixing", to_string(l.mixing)},
              {"attention_count", l.attention_count},
              {"attention_layout", to_string(l.attention_layout)},
              {"moe_count", l.moe_count},
              {"moe_layout", to_string(l.moe_layout)}};
}

LayoutSpec layout_from_json(const json& j, LayoutSpec base) {
  if (j.contains("mixing")) base.mixing = parse_mixing_kind(j.at("mixing").get<std::string>());
  read_if(j, "attention_count", base.attention_count);
  if (j.contains("attention_layout"))
    base.attention_layout = parse_placement(j.at("attention_layout").get<std::string>());
  read_if(j, "moe_count", base.moe_count);
  if (j.contains("moe_layout")) base.moe_layout = parse_placement(j.at("moe_layout").get<std::string>());
  return base;
}

}  // namespace

std::string_view to_string(MlpKind kind) noexcept { return kind == MlpKind::Dense ? "Dense" : "MoE"; }

MlpKind parse_mlp_kind(std::string_view name) {
  if (name == "Dense") return MlpKind::Dense;
  if (name == "MoE") return MlpKind::MoE;
  throw std::invalid_argument("unknown MLP kind '" + std::string(name) + "'");
}

std::string_view to_string(Placement p) noexcept {
  for (const auto& [k, name] : kPlacementNames)
    if (k == p) return name;
  return "?";
}

Placement parse_placement(std::string_view name) {
  for (const auto& [k, n] : kPlacementNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown layout '" + std::string(name) + "'");
}

std::vector<std::size_t> placement_indices(std::size_t num_layers, std::size_t count, Placement placement) {
  if (count > num_layers)
    throw ConfigError("cannot place " + std::to_string(count) + " blocks in " + std::to_string(num_layers) +
                      " layers");
  std::vector<std::size_t> out;
  if (count == 0) return out;
  switch (placement) {
    case Placement::Top:
      for (std::size_t i = num_layers - count; i < num_layers; ++i) out.push_back(i);
      break;
    case Placement::Bottom:
      for (std::size_t i = 0; i < count; ++i) out.push_back(i);
      break;
    case Placement::Middle: {
      const std::size_t start = (num_layers - count) / 2;
      for (std::size_t i = 0; i < count; ++i) out.push_back(start + i);
      break;
    }
    case Placement::Mixed:
    case Placement::MixedOdd: {
      const std::size_t stride = (num_layers + count - 1) / count;
      const std::size_t start = placement == Placement::Mixed ? 0 : 1;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = start + i * stride;
        if (idx >= num_layers)
          throw ConfigError(std::string(to_string(placement)) + " layout of " + std::to_string(count) +
                            " blocks does not fit in " + std::to_string(num_layers) + " layers");
        out.push_back(idx);
      }
      break;
    }
  }
  return out;
}

std::vector<BlockSpec> build_layout(std::size_t num_layers, std::size_t attention_count,
                                    Placement attention_layout, std::size_t moe_count, Placement moe_layout,
                                    MixingKind mixing) {
  if (mixing == MixingKind::SelfAttention && attention_count != num_layers && attention_count != 0)
    throw ConfigError("use attention_count to place attention blocks; mixing kind must be a mixing sublayer");
  std::vector<BlockSpec> blocks(num_layers, BlockSpec{mixing, MlpKind::Dense});
  for (std::size_t i : placement_indices(num_layers, attention_count, attention_layout))
    blocks[i].mixing = MixingKind::SelfAttention;
  for (std::size_t i : placement_indices(num_layers, moe_count, moe_layout)) blocks[i].mlp = MlpKind::MoE;
  return blocks;
}

void ModelConfig::resolve_blocks() {
  if (layout)
    blocks = build_layout(num_layers, layout->attention_count, layout->attention_layout, layout->moe_count,
                          layout->moe_layout, layout->mixing);
}

void ModelConfig::validate() const {
  if (blocks.size() != num_layers)
    throw ConfigError("config has " + std::to_string(blocks.size()) + " blocks but num_layers = " +
                      std::to_string(num_layers));
  if (d_m == 0 || d_ff == 0 || seq_len == 0 || vocab_size == 0)
    throw ConfigError("d_m, d_ff, seq_len and vocab_size must be positive");
  if (type_vocab != 2) throw ConfigError("type_vocab must be 2");
  if (num_heads == 0 || d_m % num_heads != 0)
    throw ConfigError("d_m " + std::to_string(d_m) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  if (dropout < 0.0 || dropout >= 1.0 || attention_dropout < 0.0 || attention_dropout >= 1.0)
    throw ConfigError("dropout rates must be in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  if (precision != "double") throw ConfigError("unsupported precision '" + precision + "' (only double)");
  if (has_moe()) moe.validate();
}

std::size_t ModelConfig::count_blocks(MixingKind mixing) const {
  return static_cast<std::size_t>(
      std::count_if(blocks.begin(), blocks.end(), [&](const BlockSpec& b) { return b.mixing == mixing; }));
}

std::size_t ModelConfig::count_blocks(MlpKind mlp) const {
  return static_cast<std::size_t>(
      std::count_if(blocks.begin(), blocks.end(), [&](const BlockSpec& b) { return b.mlp == mlp; }));
}

ModelConfig build_preset(std::string_view name) {
  if (name == "bert-base") return bert("bert-base", 12, 768);
  if (name == "sparse-mixer-base") return sparse_mixer("sparse-mixer-base", 14, 512, 4, 4, 16);
  if (name == "fast-sparse-mixer") {
    ModelConfig c = sparse_mixer("fast-sparse-mixer", 14, 512, 4, 4, 16);
    c.moe.cf_train = c.moe.cf_eval = 0.5;
    return c;
  }
  for (const ScalingRow& row : kScaling) {
    if (name == std::string("bert-") + row.suffix) return bert(std::string(name), row.bert_layers, row.bert_d_m);
    if (name == std::string("sm-") + row.suffix)
      return sparse_mixer(std::string(name), row.sm_layers, row.sm_d_m, row.attention, row.moe, row.experts);
  }

  if (name == "tiny-sparse-mixer")
    return tiny("tiny-sparse-mixer", {MixingKind::Linear, 1, Placement::Top, 1, Placement::Bottom});
  if (name == "tiny-fast-sparse-mixer") {
    ModelConfig c = tiny("tiny-fast-sparse-mixer", {MixingKind::Linear, 1, Placement::Top, 1, Placement::Bottom});
    c.moe.cf_train = c.moe.cf_eval = 0.5;
    return c;
  }
  if (name == "tiny-switch") {
    ModelConfig c = tiny("tiny-switch", {MixingKind::Linear, 1, Placement::Top, 1, Placement::Bottom});
    c.moe.router_kind = RouterKind::TokensChoose;
    return c;
  }
  if (name == "tiny-bert") return tiny("tiny-bert", {MixingKind::Linear, 2, Placement::Top, 0, Placement::Middle});
  const std::pair<std::string_view, MixingKind> tiny_mixers[] = {{"tiny-fourier", MixingKind::Fourier},
                                                                 {"tiny-hartley", MixingKind::Hartley},
                                                                 {"tiny-linear", MixingKind::Linear},
                                                                 {"tiny-toeplitz", MixingKind::Toeplitz},
                                                                 {"tiny-circulant", MixingKind::Circulant}};
  for (const auto& [n, kind] : tiny_mixers)
    if (name == n) return tiny(std::string(n), {kind, 0, Placement::Top, 0, Placement::Middle});

  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out = {"bert-base", "sparse-mixer-base", "fast-sparse-mixer"};
  for (const ScalingRow& row : kScaling) out.push_back(std::string("bert-") + row.suffix);
  for (const ScalingRow& row : kScaling) out.push_back(std::string("sm-") + row.suffix);
  for (const char* t : {"tiny-sparse-mixer", "tiny-fast-sparse-mixer", "tiny-switch", "tiny-bert", "tiny-fourier",
                        "tiny-hartley", "tiny-linear", "tiny-toeplitz", "tiny-circulant"})
    out.emplace_back(t);
  return out;
}

json to_json(const MoEConfig& m) {
  return json{{"num_experts", m.num_experts},   {"cf_train", m.cf_train},
              {"cf_eval", m.cf_eval},           {"group_size", m.group_size},
              {"router_kind", to_string(m.router_kind)}, {"bpr", m.bpr},
              {"lb_loss_coef", m.lb_loss_coef}, {"z_loss_coef", m.z_loss_coef},
              {"expert_d_ff", m.expert_d_ff},   {"expert_dropout", m.expert_dropout}};
}

MoEConfig moe_config_from_json(const json& j, const MoEConfig& base) {
  MoEConfig m = base;
  read_if(j, "num_experts", m.num_experts);
  read_if(j, "cf_train", m.cf_train);
  read_if(j, "cf_eval", m.cf_eval);
  if (j.contains("cf")) m.cf_train = m.cf_eval = j.at("cf").get<double>();
  read_if(j, "group_size", m.group_size);
  if (j.contains("router_kind")) m.router_kind = parse_router_kind(j.at("router_kind").get<std::string>());
  read_if(j, "bpr", m.bpr);
  read_if(j, "lb_loss_coef", m.lb_loss_coef);
  read_if(j, "z_loss_coef", m.z_loss_coef);
  read_if(j, "expert_d_ff", m.expert_d_ff);
  read_if(j, "expert_dropout", m.expert_dropout);
  return m;
}

json to_json(const ModelConfig& c) {
  json blocks = json::array();
  for (const BlockSpec& b : c.blocks) blocks.push_back({{"mixing", to_string(b.mixing)}, {"mlp", to_string(b.mlp)}});
  return json{{"name", c.name},
              {"num_layers", c.num_layers},
              {"d_m", c.d_m},
              {"d_ff", c.d_ff},
              {"num_heads", c.num_heads},
              {"seq_len", c.seq_len},
              {"vocab_size", c.vocab_size},
              {"type_vocab", c.type_vocab},
              {"layout", c.layout ? layout_to_json(*c.layout) : json(nullptr)},
              {"blocks", blocks},
              {"moe", to_json(c.moe)},
              {"dropout", c.dropout},
              {"attention_dropout", c.attention_dropout},
              {"ln_eps", c.ln_eps},
              {"init_std", c.init_std},
              {"precision", c.precision}};
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  static const std::set<std::string> known = {
      "name",  "num_layers", "d_m",     "d_ff",   "num_heads",         "seq_len", "vocab_size", "type_vocab",
      "layout", "blocks",    "moe",     "dropout", "attention_dropout", "ln_eps",  "init_std",   "precision",
      "mixing"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");

  ModelConfig c = base;
  read_if(j, "name", c.name);
  read_if(j, "num_layers", c.num_layers);
  read_if(j, "d_m", c.d_m);
  read_if(j, "d_ff", c.d_ff);
  read_if(j, "num_heads", c.num_heads);
  read_if(j, "seq_len", c.seq_len);
  read_if(j, "vocab_size", c.vocab_size);
  read_if(j, "type_vocab", c.type_vocab);
  read_if(j, "dropout", c.dropout);
  read_if(j, "attention_dropout", c.attention_dropout);
  read_if(j, "ln_eps", c.ln_eps);
  read_if(j, "init_std", c.init_std);
  read_if(j, "precision", c.precision);
  if (j.contains("moe")) c.moe = moe_config_from_json(j.at("moe"), c.moe);

  if (j.contains("blocks") && !j.at("blocks").is_null()) {
    c.blocks.clear();
    for (const json& b : j.at("blocks"))
      c.blocks.push_back({parse_mixing_kind(b.at("mixing").get<std::string>()),
                          parse_mlp_kind(b.at("mlp").get<std::string>())});
  }
  if (j.contains("layout")) {
    if (j.at("layout").is_null())
      c.layout.reset();
    else
      c.layout = layout_from_json(j.at("layout"), c.layout.value_or(LayoutSpec{}));
  }
  if (j.contains("mixing")) {
    if (!c.layout) throw ConfigError("'mixing' shortcut requires a layout");
    c.layout->mixing = parse_mixing_kind(j.at("mixing").get<std::string>());
  }
  c.resolve_blocks();
  return c;
}

}  // namespace sparsemix
