// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sparsemix/mixing.hpp"

namespace sparsemix {
namespace {

std::string block_prefix(std::size_t layer, std::string_view sub) {
  return "blocks." + std::to_string(layer) + "." + std::string(sub);
}

void add_layer_norm(ParamStore& params, const std::string& prefix, std::size_t d) {
  params.add(prefix + ".gamma", Tensor({d}, 1.0));
  params.add(prefix + ".beta", Tensor({d}));
}

Tensor apply_ln(const Tensor& x, const ParamStore& params, const std::string& prefix, double eps,
                LayerNormCache* cache) {
  return layer_norm(x, params.at(prefix + ".gamma"), params.at(prefix + ".beta"), eps, cache);
}

Tensor ln_backward(const Tensor& dy, const LayerNormCache& cache, const ParamStore& params, const std::string& prefix,
                   ParamStore& grads) {
  return layer_norm_backward(dy, cache, params.at(prefix + ".gamma"), grads.at(prefix + ".gamma"),
                             grads.at(prefix + ".beta"));
}

// Returns an empty mask when dropout is inactive.
Tensor maybe_dropout(Tensor& x, double rate, Mode mode, Rng* rng) {
  if (mode != Mode::Train || !rng || rate <= 0.0) return {};
  Tensor mask = dropout_mask(x.shape(), rate, *rng);
  x = hadamard(x, mask);
  return mask;
}

Tensor apply_mask(const Tensor& g, const Tensor& mask) { return mask.numel() ? hadamard(g, mask) : g; }

StructuredKind structured_kind(MixingKind kind) {
  return kind == MixingKind::Toeplitz ? StructuredKind::Toeplitz : StructuredKind::Circulant;
}

Tensor mix_one(const Tensor& xs, MixingKind kind, const ParamStore& params, std::size_t layer) {
  switch (kind) {
    case MixingKind::Fourier:
      return fourier_sublayer(xs);
    case MixingKind::Hartley:
      return hartley_sublayer(xs);
    case MixingKind::Linear:
      return linear_sublayer(xs, params.at(layer, "mixing", "m_seq"), params.at(layer, "mixing", "m_h"));
    case MixingKind::Toeplitz:
      return structured_sublayer(xs, StructuredKind::Toeplitz, params.at(layer, "mixing", "t_seq"),
                                 params.at(layer, "mixing", "t_h"));
    case MixingKind::Circulant:
      return structured_sublayer(xs, StructuredKind::Circulant, params.at(layer, "mixing", "c_seq"),
                                 params.at(layer, "mixing", "c_h"));
    case MixingKind::SelfAttention:
      break;
  }
  throw std::logic_error("mix_one: attention handled separately");
}

Tensor mix_one_backward(const Tensor& dy, const Tensor& xs, MixingKind kind, const ParamStore& params,
                        std::size_t layer, ParamStore& grads) {
  switch (kind) {
    case MixingKind::Fourier:
      return fourier_sublayer_backward(dy);
    case MixingKind::Hartley:
      return hartley_sublayer_backward(dy);
    case MixingKind::Linear:
      return linear_sublayer_backward(dy, xs, params.at(layer, "mixing", "m_seq"),
                                      params.at(layer, "mixing", "m_h"), grads.at(layer, "mixing", "m_seq"),
                                      grads.at(layer, "mixing", "m_h"));
    case MixingKind::Toeplitz:
    case MixingKind::Circulant: {
      const char* s = kind == MixingKind::Toeplitz ? "t_seq" : "c_seq";
      const char* h = kind == MixingKind::Toeplitz ? "t_h" : "c_h";
      return structured_sublayer_backward(dy, xs, structured_kind(kind), params.at(layer, "mixing", s),
                                          params.at(layer, "mixing", h), grads.at(layer, "mixing", s),
                                          grads.at(layer, "mixing", h));
    }
    case MixingKind::SelfAttention:
      break;
  }
  throw std::logic_error("mix_one_backward: attention handled separately");
}

struct HeadsCache {
  EmbedCache embed;
  std::vector<BlockCache> blocks;
};

}  // namespace

void Batch::validate(const ModelConfig& cfg) const {
  const std::size_t t = num_tokens();
  if (input_ids.size() != t || type_ids.size() != t || mask.size() != t)
    throw ShapeError("batch: id, type and mask arrays must have batch_size * seq_len entries");
  if (seq_len != cfg.seq_len)
    throw ShapeError("batch seq_len " + std::to_string(seq_len) + " != config seq_len " +
                     std::to_string(cfg.seq_len));
  if (!nsp_labels.empty() && nsp_labels.size() != batch_size)
    throw ShapeError("batch: one NSP label per example required");
  for (std::size_t id : input_ids)
    if (id >= cfg.vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " >= vocab_size");
  for (std::size_t id : type_ids)
    if (id >= cfg.type_vocab) throw std::out_of_range("type id " + std::to_string(id) + " >= type_vocab");
  for (std::size_t l : nsp_labels)
    if (l > 1) throw std::out_of_range("NSP label must be 0 or 1");
  for (const MlmTarget& m : mlm) {
    if (m.example >= batch_size || m.position >= seq_len) throw std::out_of_range("MLM target outside the batch");
    if (mask[m.example * seq_len + m.position] == 0.0)
      throw std::out_of_range("MLM target on a padded position");
    if (m.label >= cfg.vocab_size) throw std::out_of_range("MLM label >= vocab_size");
  }
}

Batch uniform_batch(const ModelConfig& cfg, std::size_t batch_size, std::uint64_t seed, double mlm_rate) {
  Rng rng(seed);
  const std::size_t n = cfg.seq_len;
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = n;
  const std::size_t masked =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(mlm_rate * double(n))), 1, n);
  for (std::size_t e = 0; e < batch_size; ++e) {
    for (std::size_t p = 0; p < n; ++p) {
      b.input_ids.push_back(rng.uniform_index(cfg.vocab_size));
      b.type_ids.push_back(p < n / 2 ? 0 : 1);
      b.mask.push_back(1.0);
    }
    for (std::size_t k = 0; k < masked; ++k) b.mlm.push_back({e, (k * n) / masked, rng.uniform_index(cfg.vocab_size)});
    b.nsp_labels.push_back(rng.uniform_index(2));
  }
  return b;
}

std::vector<std::string> mixing_param_names(MixingKind kind) {
  switch (kind) {
    case MixingKind::Linear:
      return {"m_seq", "m_h"};
    case MixingKind::Toeplitz:
      return {"t_seq", "t_h"};
    case MixingKind::Circulant:
      return {"c_seq", "c_h"};
    default:
      return {};
  }
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Rng rng(seed);
  const double s = cfg.init_std;
  const std::size_t d = cfg.d_m, n = cfg.seq_len;
  ParamStore p;
  p.add_normal("embeddings.word", {cfg.vocab_size, d}, s, rng);
  p.add_normal("embeddings.position", {n, d}, s, rng);
  p.add_normal("embeddings.type", {cfg.type_vocab, d}, s, rng);
  add_layer_norm(p, "embeddings.ln", d);

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const BlockSpec& b = cfg.blocks[l];
    switch (b.mixing) {
      case MixingKind::SelfAttention:
        init_attention(p, block_prefix(l, "attention"), d, s, rng);
        break;
      case MixingKind::Linear:
        p.add_normal(block_param_name(l, "mixing", "m_seq"), {n, n}, s, rng);
        p.add_normal(block_param_name(l, "mixing", "m_h"), {d, d}, s, rng);
        break;
      case MixingKind::Toeplitz:
        p.add_normal(block_param_name(l, "mixing", "t_seq"), {2 * n - 1}, s, rng);
        p.add_normal(block_param_name(l, "mixing", "t_h"), {2 * d - 1}, s, rng);
        break;
      case MixingKind::Circulant:
        p.add_normal(block_param_name(l, "mixing", "c_seq"), {n}, s, rng);
        p.add_normal(block_param_name(l, "mixing", "c_h"), {d}, s, rng);
        break;
      case MixingKind::Fourier:
      case MixingKind::Hartley:
        break;
    }
    add_layer_norm(p, block_prefix(l, "mixing_ln"), d);
    if (b.mlp == MlpKind::Dense)
      init_feed_forward(p, block_prefix(l, "mlp"), d, cfg.d_ff, s, rng);
    else
      init_moe(p, block_prefix(l, "moe"), d, cfg.moe, s, rng);
    add_layer_norm(p, block_prefix(l, "mlp_ln"), d);
  }

  p.add_normal("pooler.w", {d, d}, s, rng);
  p.add("pooler.b", Tensor({d}));
  p.add_normal("mlm.w", {d, d}, s, rng);
  p.add("mlm.b", Tensor({d}));
  add_layer_norm(p, "mlm.ln", d);
  p.add("mlm.output_bias", Tensor({cfg.vocab_size}));
  p.add_normal("nsp.w", {d, 2}, s, rng);
  p.add("nsp.b", Tensor({2}));
  return p;
}

Tensor embed(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode, Rng* rng,
             EmbedCache* cache) {
  batch.validate(cfg);
  const std::size_t d = cfg.d_m, n = batch.seq_len;
  const Tensor& word = params.at("embeddings.word");
  const Tensor& pos = params.at("embeddings.position");
  const Tensor& type = params.at("embeddings.type");
  Tensor x({batch.num_tokens(), d});
  for (std::size_t t = 0; t < batch.num_tokens(); ++t) {
    auto out = x.row(t);
    auto w = word.row(batch.input_ids[t]);
    auto p = pos.row(t % n);
    auto ty = type.row(batch.type_ids[t]);
    for (std::size_t j = 0; j < d; ++j) out[j] = w[j] + p[j] + ty[j];
  }
  Tensor y = apply_ln(x, params, "embeddings.ln", cfg.ln_eps, cache ? &cache->ln : nullptr);
  Tensor mask = maybe_dropout(y, cfg.dropout, mode, rng);
  if (cache) cache->dropout = std::move(mask);
  return y;
}

Tensor encoder_block(const Tensor& x, std::size_t layer, const ModelConfig& cfg, const ParamStore& params,
                     std::span<const double> mask, Mode mode, Rng* rng, AuxLosses* aux, BlockCache* cache) {
  const BlockSpec& spec = cfg.blocks.at(layer);
  const std::size_t n = cfg.seq_len, d = cfg.d_m;
  if (x.rank() != 2 || x.cols() != d || x.rows() % n != 0)
    throw ShapeError("encoder_block: expected [b*n, d_m] input, got " + shape_to_string(x.shape()));
  const std::size_t b = x.rows() / n;
  if (mask.size() != x.rows()) throw ShapeError("encoder_block: mask must cover every token");
  const bool train = mode == Mode::Train;
  Rng* drop_rng = train ? rng : nullptr;

  Tensor mixed({b * n, d});
  if (cache) cache->attention.assign(spec.mixing == MixingKind::SelfAttention ? b : 0, {});
  for (std::size_t e = 0; e < b; ++e) {
    const Tensor xs = slice_rows(x, e * n, n);
    Tensor ys;
    if (spec.mixing == MixingKind::SelfAttention)
      ys = self_attention(xs, params, block_prefix(layer, "attention"), cfg.num_heads, mask.subspan(e * n, n),
                          train ? cfg.attention_dropout : 0.0, drop_rng, cache ? &cache->attention[e] : nullptr);
    else
      ys = mix_one(xs, spec.mixing, params, layer);
    set_rows(mixed, e * n, ys);
  }
  Tensor mix_mask = maybe_dropout(mixed, cfg.dropout, mode, rng);
  mixed += x;
  Tensor h = apply_ln(mixed, params, block_prefix(layer, "mixing_ln"), cfg.ln_eps, cache ? &cache->mix_ln : nullptr);

  Tensor mlp_out;
  if (spec.mlp == MlpKind::Dense) {
    mlp_out = feed_forward(h, params, block_prefix(layer, "mlp"), 0.0, nullptr, cache ? &cache->ffn : nullptr);
  } else {
    AuxLosses local;
    mlp_out = moe_sublayer(h, cfg.moe, params, block_prefix(layer, "moe"), mode, drop_rng, &local,
                           cache ? &cache->moe : nullptr);
    if (aux) *aux += local;
  }
  Tensor mlp_mask = maybe_dropout(mlp_out, cfg.dropout, mode, rng);
  mlp_out += h;
  Tensor y = apply_ln(mlp_out, params, block_prefix(layer, "mlp_ln"), cfg.ln_eps, cache ? &cache->mlp_ln : nullptr);

  if (cache) {
    cache->input = x;
    cache->mix_dropout = std::move(mix_mask);
    cache->hidden = std::move(h);
    cache->mlp_dropout = std::move(mlp_mask);
  }
  return y;
}

Tensor encoder_block_backward(const Tensor& dy, std::size_t layer, const ModelConfig& cfg, const ParamStore& params,
                              const BlockCache& cache, ParamStore& grads) {
  const BlockSpec& spec = cfg.blocks.at(layer);
  const std::size_t n = cfg.seq_len;
  const std::size_t b = dy.rows() / n;

  const Tensor dres2 = ln_backward(dy, cache.mlp_ln, params, block_prefix(layer, "mlp_ln"), grads);
  const Tensor dmlp = apply_mask(dres2, cache.mlp_dropout);
  Tensor dh = dres2;
  if (spec.mlp == MlpKind::Dense)
    dh += feed_forward_backward(dmlp, cache.ffn, params, block_prefix(layer, "mlp"), grads);
  else
    dh += moe_sublayer_backward(dmlp, cache.moe, cfg.moe, params, block_prefix(layer, "moe"), grads, 1.0);

  const Tensor dres1 = ln_backward(dh, cache.mix_ln, params, block_prefix(layer, "mixing_ln"), grads);
  const Tensor dmix = apply_mask(dres1, cache.mix_dropout);
  Tensor dx = dres1;
  for (std::size_t e = 0; e < b; ++e) {
    const Tensor dys = slice_rows(dmix, e * n, n);
    Tensor dxs;
    if (spec.mixing == MixingKind::SelfAttention)
      dxs = self_attention_backward(dys, cache.attention[e], params, block_prefix(layer, "attention"), cfg.num_heads,
                                    grads);
    else
      dxs = mix_one_backward(dys, slice_rows(cache.input, e * n, n), spec.mixing, params, layer, grads);
    Tensor cur = slice_rows(dx, e * n, n);
    cur += dxs;
    set_rows(dx, e * n, cur);
  }
  return dx;
}

namespace {

struct Forward {
  Tensor sequence;
  Tensor pooled;
  AuxLosses aux;
};

Forward run_encoder(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode, Rng* rng,
                    HeadsCache* cache) {
  Forward f;
  Tensor x = embed(batch, cfg, params, mode, rng, cache ? &cache->embed : nullptr);
  if (cache) cache->blocks.assign(cfg.num_layers, {});
  for (std::size_t l = 0; l < cfg.num_layers; ++l)
    x = encoder_block(x, l, cfg, params, batch.mask, mode, rng, &f.aux, cache ? &cache->blocks[l] : nullptr);

  const std::size_t d = cfg.d_m, n = batch.seq_len;
  Tensor cls({batch.batch_size, d});
  for (std::size_t e = 0; e < batch.batch_size; ++e) {
    auto src = x.row(e * n);
    std::copy(src.begin(), src.end(), cls.row(e).begin());
  }
  Tensor pooled = matmul(cls, params.at("pooler.w"));
  add_row_bias(pooled, params.at("pooler.b"));
  for (double& v : pooled.vec()) v = std::tanh(v);
  f.sequence = std::move(x);
  f.pooled = std::move(pooled);
  return f;
}

}  // namespace

EncoderOutput forward_encoder(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode,
                              Rng* rng) {
  Forward f = run_encoder(batch, cfg, params, mode, rng, nullptr);
  return {f.sequence.reshaped({batch.batch_size, batch.seq_len, cfg.d_m}), std::move(f.pooled), f.aux};
}

LossReport pretrain_loss(const Batch& batch, const ModelConfig& cfg, const ParamStore& params, Mode mode, Rng* rng,
                         ParamStore* grads) {
  HeadsCache cache;
  Forward f = run_encoder(batch, cfg, params, mode, rng, grads ? &cache : nullptr);
  const std::size_t d = cfg.d_m, n = batch.seq_len, m = batch.mlm.size();
  LossReport r;
  r.lb = f.aux.lb;
  r.z = f.aux.z;

  // MLM head: dense + GELU + LN, then the tied word-embedding projection.
  Tensor gathered({m, d});
  std::vector<std::size_t> mlm_labels(m);
  for (std::size_t i = 0; i < m; ++i) {
    const MlmTarget& t = batch.mlm[i];
    auto src = f.sequence.row(t.example * n + t.position);
    std::copy(src.begin(), src.end(), gathered.row(i).begin());
    mlm_labels[i] = t.label;
  }
  Tensor pre = matmul(gathered, params.at("mlm.w"));
  add_row_bias(pre, params.at("mlm.b"));
  const Tensor act = gelu(pre);
  LayerNormCache mlm_ln;
  const Tensor hidden = apply_ln(act, params, "mlm.ln", cfg.ln_eps, &mlm_ln);
  Tensor logits = matmul_nt(hidden, params.at("embeddings.word"));
  add_row_bias(logits, params.at("mlm.output_bias"));
  Tensor dlogits;
  r.mlm = m ? cross_entropy_rows(logits, mlm_labels, grads ? &dlogits : nullptr, 1.0, &r.mlm_correct) : 0.0;
  r.mlm_count = m;

  Tensor dnsp;
  Tensor nsp_logits;
  if (!batch.nsp_labels.empty()) {
    nsp_logits = matmul(f.pooled, params.at("nsp.w"));
    add_row_bias(nsp_logits, params.at("nsp.b"));
    r.nsp = cross_entropy_rows(nsp_logits, batch.nsp_labels, grads ? &dnsp : nullptr, 1.0, &r.nsp_correct);
    r.nsp_count = batch.batch_size;
  }
  r.total = r.mlm + r.nsp + r.lb + r.z;
  if (!grads) return r;

  ParamStore& g = *grads;
  Tensor dseq({batch.num_tokens(), d});
  if (m) {
    accumulate_col_sums(dlogits, g.at("mlm.output_bias"));
    g.at("embeddings.word") += matmul_tn(dlogits, hidden);
    const Tensor dhidden = matmul(dlogits, params.at("embeddings.word"));
    Tensor dact = ln_backward(dhidden, mlm_ln, params, "mlm.ln", g);
    for (std::size_t i = 0; i < dact.numel(); ++i) dact[i] *= gelu_grad(pre[i]);
    accumulate_col_sums(dact, g.at("mlm.b"));
    g.at("mlm.w") += matmul_tn(gathered, dact);
    const Tensor dgathered = matmul_nt(dact, params.at("mlm.w"));
    for (std::size_t i = 0; i < m; ++i) {
      const MlmTarget& t = batch.mlm[i];
      auto dst = dseq.row(t.example * n + t.position);
      auto src = dgathered.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  if (!batch.nsp_labels.empty()) {
    accumulate_col_sums(dnsp, g.at("nsp.b"));
    g.at("nsp.w") += matmul_tn(f.pooled, dnsp);
    Tensor dpooled = matmul_nt(dnsp, params.at("nsp.w"));
    for (std::size_t i = 0; i < dpooled.numel(); ++i) dpooled[i] *= 1.0 - f.pooled[i] * f.pooled[i];
    accumulate_col_sums(dpooled, g.at("pooler.b"));
    Tensor cls({batch.batch_size, d});
    for (std::size_t e = 0; e < batch.batch_size; ++e) {
      auto src = f.sequence.row(e * n);
      std::copy(src.begin(), src.end(), cls.row(e).begin());
    }
    g.at("pooler.w") += matmul_tn(cls, dpooled);
    const Tensor dcls = matmul_nt(dpooled, params.at("pooler.w"));
    for (std::size_t e = 0; e < batch.batch_size; ++e) {
      auto dst = dseq.row(e * n);
      auto src = dcls.row(e);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }

  Tensor dx = std::move(dseq);
  for (std::size_t l = cfg.num_layers; l-- > 0;) dx = encoder_block_backward(dx, l, cfg, params, cache.blocks[l], g);

  dx = apply_mask(dx, cache.embed.dropout);
  const Tensor demb = ln_backward(dx, cache.embed.ln, params, "embeddings.ln", g);
  Tensor& gw = g.at("embeddings.word");
  Tensor& gp = g.at("embeddings.position");
  Tensor& gt = g.at("embeddings.type");
  for (std::size_t t = 0; t < batch.num_tokens(); ++t) {
    auto src = demb.row(t);
    auto w = gw.row(batch.input_ids[t]);
    auto p = gp.row(t % n);
    auto ty = gt.row(batch.type_ids[t]);
    for (std::size_t j = 0; j < d; ++j) {
      w[j] += src[j];
      p[j] += src[j];
      ty[j] += src[j];
    }
  }
  return r;
}

std::string_view to_string(OptimizerKind kind) noexcept { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::step(ParamStore& params, const ParamStore& grads) {
  ++t_;
  if (kind_ == OptimizerKind::Sgd) {
    params.axpy(-lr_, grads);
    return;
  }
  if (m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace sparsemix
