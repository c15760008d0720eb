// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "sparsemix/encoder.hpp"
#include "sparsemix/errors.hpp"
#include "test_util.hpp"

namespace sparsemix {
namespace {

using testing::random_batch;
using testing::random_tensor;

std::vector<std::size_t> indices_of(const std::vector<BlockSpec>& blocks, MixingKind kind) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].mixing == kind) out.push_back(i);
  return out;
}

std::vector<std::size_t> indices_of(const std::vector<BlockSpec>& blocks, MlpKind kind) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].mlp == kind) out.push_back(i);
  return out;
}

TEST(Presets, BertBase) {
  const ModelConfig c = build_preset("bert-base");
  EXPECT_EQ(c.num_layers, 12u);
  EXPECT_EQ(c.d_m, 768u);
  EXPECT_EQ(c.d_ff, 3072u);
  EXPECT_EQ(c.num_heads, 12u);
  EXPECT_EQ(c.vocab_size, 32000u);
  EXPECT_EQ(c.seq_len, 512u);
  for (const BlockSpec& b : c.blocks) EXPECT_EQ(b, (BlockSpec{MixingKind::SelfAttention, MlpKind::Dense}));
}

TEST(Presets, SparseMixerBase) {
  const ModelConfig c = build_preset("sparse-mixer-base");
  EXPECT_EQ(c.num_layers, 14u);
  EXPECT_EQ(c.d_m, 512u);
  EXPECT_EQ(c.d_ff, 2048u);
  EXPECT_EQ(c.num_heads, 8u);
  EXPECT_EQ(c.moe.num_experts, 16u);
  EXPECT_EQ(c.moe.router_kind, RouterKind::ExpertsChoose);
  EXPECT_EQ(c.moe.cf_train, 1.0);
  EXPECT_EQ(c.moe.cf_eval, 1.0);
  EXPECT_EQ(c.moe.group_size, 4096u);
  std::vector<BlockSpec> expected;
  for (int i = 0; i < 5; ++i) expected.push_back({MixingKind::Linear, MlpKind::Dense});
  for (int i = 0; i < 4; ++i) expected.push_back({MixingKind::Linear, MlpKind::MoE});
  expected.push_back({MixingKind::Linear, MlpKind::Dense});
  for (int i = 0; i < 4; ++i) expected.push_back({MixingKind::SelfAttention, MlpKind::Dense});
  EXPECT_EQ(c.blocks, expected);
  EXPECT_EQ(c.count_blocks(MlpKind::Dense), 10u);
  EXPECT_EQ(c.count_blocks(MlpKind::Dense) + c.count_blocks(MlpKind::MoE), c.num_layers);
  EXPECT_EQ(c.count_blocks(MixingKind::SelfAttention), 4u);
  EXPECT_EQ(c.count_blocks(MlpKind::MoE), 4u);
}

TEST(Presets, FastSparseMixerDiffersOnlyInCapacity) {
  ModelConfig fast = build_preset("fast-sparse-mixer");
  const ModelConfig base = build_preset("sparse-mixer-base");
  EXPECT_EQ(fast.moe.cf_train, 0.5);
  EXPECT_EQ(fast.moe.cf_eval, 0.5);
  fast.name = base.name;
  fast.moe.cf_train = fast.moe.cf_eval = 1.0;
  EXPECT_EQ(fast, base);
}

TEST(Presets, ScalingLadder) {
  const ModelConfig l = build_preset("sm-L24");
  EXPECT_EQ(l.num_layers, 24u);
  EXPECT_EQ(l.d_m, 1024u);
  EXPECT_EQ(l.count_blocks(MixingKind::SelfAttention), 6u);
  EXPECT_EQ(l.count_blocks(MlpKind::MoE), 6u);
  EXPECT_EQ(l.moe.num_experts, 64u);
  for (const char* n : {"bert-L2", "bert-L4", "bert-L4b", "bert-L8", "bert-L18", "bert-L24", "sm-L2", "sm-L4",
                        "sm-L4b", "sm-L8", "sm-L18", "sm-L24"}) {
    const ModelConfig c = build_preset(n);
    EXPECT_NO_THROW(c.validate()) << n;
    EXPECT_EQ(c.d_ff, 4 * c.d_m) << n;
    EXPECT_EQ(c.num_heads, c.d_m / 64) << n;
  }
  EXPECT_THROW(build_preset("bert-huge"), ConfigError);
}

TEST(Presets, AllValidate) {
  for (const std::string& n : preset_names()) EXPECT_NO_THROW(build_preset(n).validate()) << n;
}

TEST(Layout, Examples) {
  const auto top = build_layout(12, 4, Placement::Top, 0, Placement::Middle);
  EXPECT_EQ(indices_of(top, MixingKind::SelfAttention), (std::vector<std::size_t>{8, 9, 10, 11}));
  const auto mixed = build_layout(12, 0, Placement::Top, 6, Placement::Mixed);
  EXPECT_EQ(indices_of(mixed, MlpKind::MoE), (std::vector<std::size_t>{0, 2, 4, 6, 8, 10}));
  const auto odd = build_layout(12, 0, Placement::Top, 6, Placement::MixedOdd);
  EXPECT_EQ(indices_of(odd, MlpKind::MoE), (std::vector<std::size_t>{1, 3, 5, 7, 9, 11}));
  EXPECT_EQ(build_layout(14, 4, Placement::Top, 4, Placement::Middle), build_preset("sparse-mixer-base").blocks);
  EXPECT_EQ(placement_indices(12, 4, Placement::Bottom), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(placement_indices(7, 2, Placement::Middle), (std::vector<std::size_t>{2, 3}));
  EXPECT_THROW(placement_indices(4, 5, Placement::Top), ConfigError);
  for (Placement p : {Placement::Top, Placement::Bottom, Placement::Middle, Placement::Mixed, Placement::MixedOdd})
    EXPECT_EQ(parse_placement(to_string(p)), p);
}

TEST(Config, ValidationErrors) {
  ModelConfig c = build_preset("tiny-sparse-mixer");
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = build_preset("tiny-sparse-mixer");
  c.blocks.pop_back();
  EXPECT_THROW(c.validate(), ConfigError);
  c = build_preset("tiny-sparse-mixer");
  c.precision = "float";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  for (const std::string& n : preset_names()) {
    const ModelConfig c = build_preset(n);
    EXPECT_EQ(model_config_from_json(to_json(c)), c) << n;
  }
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"d_model", 3}}), ConfigError);
}

TEST(Config, LayoutOverrideRebuildsBlocks) {
  const ModelConfig base = build_preset("tiny-sparse-mixer");
  const ModelConfig c = model_config_from_json({{"layout", {{"attention_count", 0}}}, {"mixing", "Fourier"}}, base);
  EXPECT_EQ(c.count_blocks(MixingKind::Fourier), 2u);
  EXPECT_EQ(c.count_blocks(MlpKind::MoE), 1u);
}

ModelConfig no_dropout(ModelConfig c) {
  c.dropout = c.attention_dropout = 0.0;
  c.moe.expert_dropout = 0.0;
  return c;
}

TEST(Embed, ZeroTablesGiveZeros) {
  const ModelConfig cfg = build_preset("tiny-linear");
  ParamStore p = init_params(cfg, 1);
  for (const char* t : {"embeddings.word", "embeddings.position", "embeddings.type"}) p.at(t).fill(0.0);
  const Tensor y = embed(random_batch(cfg, 2, 3), cfg, p, Mode::Eval, nullptr);
  EXPECT_EQ(y.shape(), (Shape{16, 32}));
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, CompositionalOracle) {
  const ModelConfig cfg = build_preset("tiny-linear");
  const ParamStore p = init_params(cfg, 2);
  Batch b = random_batch(cfg, 1, 4);
  b.input_ids[0] = 5;
  const Tensor y = embed(b, cfg, p, Mode::Eval, nullptr);
  Tensor row({1, cfg.d_m});
  for (std::size_t c = 0; c < cfg.d_m; ++c)
    row[c] = p.at("embeddings.word").at(5, c) + p.at("embeddings.position").at(0, c) +
             p.at("embeddings.type").at(b.type_ids[0], c);
  const Tensor ref = layer_norm(row, p.at("embeddings.ln.gamma"), p.at("embeddings.ln.beta"), cfg.ln_eps);
  for (std::size_t c = 0; c < cfg.d_m; ++c) EXPECT_NEAR(y.at(0, c), ref[c], 1e-14);
  EXPECT_EQ(y, embed(b, cfg, p, Mode::Eval, nullptr));
}

TEST(Embed, RejectsOutOfRangeIds) {
  const ModelConfig cfg = build_preset("tiny-linear");
  const ParamStore p = init_params(cfg, 2);
  Batch b = random_batch(cfg, 1, 4);
  b.input_ids[3] = cfg.vocab_size;
  EXPECT_THROW(embed(b, cfg, p, Mode::Eval, nullptr), std::out_of_range);
}

Tensor nested_ln(const Tensor& x, double eps) {
  const Tensor g({x.cols()}, 1.0), b({x.cols()});
  return layer_norm(layer_norm(x, g, b, eps), g, b, eps);
}

TEST(Block, ZeroSublayersReduceToNestedLayerNorm) {
  const ModelConfig cfg = no_dropout(build_preset("tiny-linear"));
  ParamStore p = init_params(cfg, 5);
  for (auto& [name, t] : p)
    if (name.starts_with("blocks.0.mixing.") || name.starts_with("blocks.0.mlp.")) t.fill(0.0);
  Rng rng(6);
  const Tensor x = random_tensor({cfg.seq_len, cfg.d_m}, rng);
  const std::vector<double> mask(cfg.seq_len, 1.0);
  const Tensor y = encoder_block(x, 0, cfg, p, mask, Mode::Eval, nullptr, nullptr);
  EXPECT_LT(max_abs_diff(y, nested_ln(x, cfg.ln_eps)), 1e-12);
}

TEST(Block, IdentityLinearMixingDoublesResidual) {
  const ModelConfig cfg = no_dropout(build_preset("tiny-linear"));
  ParamStore p = init_params(cfg, 7);
  for (auto& [name, t] : p)
    if (name.starts_with("blocks.0.mlp.")) t.fill(0.0);
  for (const char* m : {"blocks.0.mixing.m_seq", "blocks.0.mixing.m_h"}) {
    Tensor& t = p.at(m);
    t.fill(0.0);
    for (std::size_t i = 0; i < t.rows(); ++i) t.at(i, i) = 1.0;
  }
  Rng rng(8);
  const Tensor x = random_tensor({cfg.seq_len, cfg.d_m}, rng);
  const std::vector<double> mask(cfg.seq_len, 1.0);
  const Tensor y = encoder_block(x, 0, cfg, p, mask, Mode::Eval, nullptr, nullptr);
  EXPECT_LT(max_abs_diff(y, nested_ln(2.0 * x, cfg.ln_eps)), 1e-12);
}

TEST(Block, AttentionWithMoEPreservesShape) {
  ModelConfig cfg = build_preset("tiny-sparse-mixer");
  cfg.blocks[1] = {MixingKind::SelfAttention, MlpKind::MoE};
  const ParamStore p = init_params(cfg, 9);
  Rng rng(10);
  const Tensor x = random_tensor({3 * cfg.seq_len, cfg.d_m}, rng);
  const std::vector<double> mask(3 * cfg.seq_len, 1.0);
  AuxLosses aux;
  EXPECT_EQ(encoder_block(x, 1, cfg, p, mask, Mode::Eval, nullptr, &aux).shape(), x.shape());
  EXPECT_GT(aux.z, 0.0);
}

TEST(Forward, NoLayersReturnsEmbedding) {
  ModelConfig cfg = build_preset("tiny-linear");
  cfg.num_layers = 0;
  cfg.blocks.clear();
  cfg.layout.reset();
  const ParamStore p = init_params(cfg, 11);
  const Batch b = random_batch(cfg, 2, 12);
  const EncoderOutput out = forward_encoder(b, cfg, p, Mode::Eval);
  EXPECT_EQ(out.sequence.reshaped({16, 32}), embed(b, cfg, p, Mode::Eval, nullptr));
}

TEST(Forward, SparseMixerBaseShapes) {
  ModelConfig cfg = build_preset("sparse-mixer-base");
  cfg.seq_len = 16;
  cfg.vocab_size = 64;
  const ParamStore p = init_params(cfg, 13);
  const EncoderOutput out = forward_encoder(random_batch(cfg, 2, 14), cfg, p, Mode::Eval);
  EXPECT_EQ(out.sequence.shape(), (Shape{2, 16, 512}));
  EXPECT_EQ(out.pooled.shape(), (Shape{2, 512}));
  EXPECT_TRUE(all_finite(out.sequence));
}

TEST(Forward, BatchPermutationEquivariant) {
  for (const char* preset : {"tiny-bert", "tiny-linear", "tiny-fourier"}) {
    const ModelConfig cfg = build_preset(preset);
    const ParamStore p = init_params(cfg, 15);
    const Batch a = random_batch(cfg, 2, 16);
    Batch b = a;
    const std::size_t n = cfg.seq_len;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(b.input_ids[i], b.input_ids[n + i]);
      std::swap(b.type_ids[i], b.type_ids[n + i]);
    }
    const EncoderOutput oa = forward_encoder(a, cfg, p, Mode::Eval), ob = forward_encoder(b, cfg, p, Mode::Eval);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg.d_m; ++c) {
        EXPECT_NEAR(oa.sequence.at(0, i, c), ob.sequence.at(1, i, c), 1e-12) << preset;
        EXPECT_NEAR(oa.sequence.at(1, i, c), ob.sequence.at(0, i, c), 1e-12) << preset;
      }
  }
}

TEST(Forward, MixingSwapsStayFinite) {
  for (MixingKind k : {MixingKind::Fourier, MixingKind::Hartley, MixingKind::Linear}) {
    ModelConfig cfg = build_preset("tiny-linear");
    for (BlockSpec& b : cfg.blocks) b.mixing = k;
    const ParamStore p = init_params(cfg, 17);
    for (std::uint64_t s = 0; s < 100; ++s) {
      const EncoderOutput out = forward_encoder(random_batch(cfg, 1, s), cfg, p, Mode::Eval);
      ASSERT_EQ(out.sequence.shape(), (Shape{1, cfg.seq_len, cfg.d_m}));
      ASSERT_TRUE(all_finite(out.sequence) && all_finite(out.pooled)) << to_string(k) << " batch " << s;
    }
  }
}

TEST(Loss, InitialLossNearUniform) {
  ModelConfig cfg = build_preset("tiny-sparse-mixer");
  cfg.vocab_size = 128;
  double mlm = 0, nsp = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const LossReport r = pretrain_loss(random_batch(cfg, 8, 20 + s), cfg, init_params(cfg, s), Mode::Eval);
    mlm += r.mlm / 4;
    nsp += r.nsp / 4;
    EXPECT_NEAR(r.total, r.mlm + r.nsp + r.lb + r.z, 1e-14);
  }
  EXPECT_NEAR(mlm, std::log(128.0), 0.15 * std::log(128.0));
  EXPECT_NEAR(nsp, std::log(2.0), 0.1 * std::log(2.0));
}

TEST(Loss, DenseModelHasNoAuxLosses) {
  const ModelConfig cfg = build_preset("tiny-bert");
  const LossReport r = pretrain_loss(random_batch(cfg, 2, 21), cfg, init_params(cfg, 1), Mode::Eval);
  EXPECT_EQ(r.lb, 0.0);
  EXPECT_EQ(r.z, 0.0);
}

TEST(Loss, NoMaskedPositionsGivesZeroMlm) {
  const ModelConfig cfg = build_preset("tiny-linear");
  Batch b = random_batch(cfg, 2, 22);
  b.mlm.clear();
  const ParamStore p = init_params(cfg, 1);
  ParamStore g = p.zeros_like();
  const LossReport r = pretrain_loss(b, cfg, p, Mode::Eval, nullptr, &g);
  EXPECT_EQ(r.mlm, 0.0);
  EXPECT_TRUE(g.all_finite());
}

TEST(Loss, DeterministicWithoutDropout) {
  const ModelConfig cfg = build_preset("tiny-sparse-mixer");
  const ParamStore p = init_params(cfg, 3);
  const Batch b = random_batch(cfg, 2, 23);
  ParamStore g1 = p.zeros_like(), g2 = p.zeros_like();
  const LossReport a = pretrain_loss(b, cfg, p, Mode::Eval, nullptr, &g1);
  const LossReport c = pretrain_loss(b, cfg, p, Mode::Eval, nullptr, &g2);
  EXPECT_EQ(a.total, c.total);
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(init_params(cfg, 3), p);
}

TEST(Loss, TrainModeDropoutNeedsRng) {
  const ModelConfig cfg = build_preset("tiny-sparse-mixer");
  const ParamStore p = init_params(cfg, 3);
  const Batch b = random_batch(cfg, 2, 24);
  const double eval = pretrain_loss(b, cfg, p, Mode::Eval).total;
  EXPECT_EQ(pretrain_loss(b, cfg, p, Mode::Train).total, eval);
  Rng r1(5), r2(5);
  const double t1 = pretrain_loss(b, cfg, p, Mode::Train, &r1).total;
  EXPECT_NE(t1, eval);
  EXPECT_EQ(pretrain_loss(b, cfg, p, Mode::Train, &r2).total, t1);
}

GradCheckResult check_preset(const std::string& name, Mode mode = Mode::Eval) {
  ModelConfig cfg = build_preset(name);
  cfg.init_std = 0.2;
  const ParamStore params = init_params(cfg, 7);
  const Batch batch = random_batch(cfg, 2, 11);
  LossFn loss = [&](const ParamStore& p, ParamStore* g) {
    Rng rng(19);
    return pretrain_loss(batch, cfg, p, mode, mode == Mode::Train ? &rng : nullptr, g).total;
  };
  return finite_diff_grad_check(loss, params, 1e-5, 100, 3);
}

class PresetGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(PresetGradient, EndToEndMatchesFiniteDifference) {
  const GradCheckResult r = check_preset(GetParam());
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
}

TEST_P(PresetGradient, WithDropoutMatchesFiniteDifference) {
  const GradCheckResult r = check_preset(GetParam(), Mode::Train);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(Tiny, PresetGradient,
                         ::testing::Values("tiny-sparse-mixer", "tiny-fast-sparse-mixer", "tiny-switch", "tiny-bert",
                                           "tiny-fourier", "tiny-hartley", "tiny-linear", "tiny-toeplitz",
                                           "tiny-circulant"),
                         [](const auto& info) {
                           std::string s = info.param;
                           for (char& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(Optimizer, StepsReduceQuadratic) {
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    ParamStore p;
    p.add("w", Tensor::from({2}, {3.0, -2.0}));
    Optimizer opt(kind, 0.1);
    double prev = 1e9;
    for (int i = 0; i < 20; ++i) {
      ParamStore g = p.zeros_like();
      g.at("w") += 2.0 * p.at("w");
      const double loss = dot(p.at("w"), p.at("w"));
      EXPECT_LT(loss, prev);
      prev = loss;
      opt.step(p, g);
    }
    EXPECT_EQ(opt.steps(), 20u);
    EXPECT_EQ(parse_optimizer_kind(to_string(kind)), kind);
  }
}

}  // namespace
}  // namespace sparsemix
