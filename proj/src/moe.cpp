// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sparsemix {
namespace {

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
  const std::size_t e_count = probs.cols();
  std::size_t best = 0;
  for (std::size_t e = 1; e < e_count; ++e)
    if (probs.at(row, e) > probs.at(row, best)) best = e;
  return best;
}

std::vector<double> top1_fractions(const Tensor& probs) {
  std::vector<double> f(probs.cols(), 0.0);
  for (std::size_t t = 0; t < probs.rows(); ++t) f[argmax_row(probs, t)] += 1.0;
  for (double& v : f) v /= static_cast<double>(probs.rows());
  return f;
}

RouterDecision empty_decision(RouterKind kind, const Tensor& probs, std::size_t capacity) {
  RouterDecision d;
  d.kind = kind;
  d.num_tokens = probs.rows();
  d.num_experts = probs.cols();
  d.capacity = capacity;
  d.assignment.assign(d.num_tokens, {});
  d.expert_tokens.assign(d.num_experts, {});
  d.combine_weight.assign(d.num_experts, {});
  d.expert_load.assign(d.num_experts, 0);
  return d;
}

void finalize_assignment(RouterDecision& d) {
  for (std::size_t e = 0; e < d.num_experts; ++e) {
    d.expert_load[e] = d.expert_tokens[e].size();
    for (std::size_t t : d.expert_tokens[e]) d.assignment[t].push_back(e);
  }
  for (auto& experts : d.assignment)
    if (experts.empty()) experts.push_back(kDropped);
}

std::string join(std::string_view prefix, std::string_view name) {
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

std::string expert_prefix(std::string_view prefix, std::size_t e) {
  return join(prefix, "experts." + std::to_string(e));
}

}  // namespace

std::string_view to_string(RouterKind kind) noexcept {
  return kind == RouterKind::TokensChoose ? "TokensChoose" : "ExpertsChoose";
}

RouterKind parse_router_kind(std::string_view name) {
  if (name == "TokensChoose" || name == "TC" || name == "TokensChoose1") return RouterKind::TokensChoose;
  if (name == "ExpertsChoose" || name == "EC") return RouterKind::ExpertsChoose;
  throw std::invalid_argument("unknown router kind '" + std::string(name) + "'");
}

void MoEConfig::validate() const {
  if (num_experts < 1) throw ConfigError("MoE needs at least one expert");
  if (!(cf_train > 0.0) || !(cf_eval > 0.0)) throw ConfigError("capacity factors must be positive");
  if (group_size < 1) throw ConfigError("MoE group size must be at least 1");
  if (expert_d_ff < 1) throw ConfigError("expert_d_ff must be at least 1");
  if (expert_dropout < 0.0 || expert_dropout >= 1.0) throw ConfigError("expert dropout must be in [0, 1)");
}

std::size_t expert_capacity(double cf, std::size_t n_group, std::size_t num_experts) {
  if (!(cf > 0.0) || n_group == 0 || num_experts == 0)
    throw ConfigError("expert_capacity: inputs must be positive");
  const double raw = cf * static_cast<double>(n_group) / static_cast<double>(num_experts);
  // Guard against the product landing a hair above an integer.
  const double nearest = std::round(raw);
  const double ceiled = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::max<std::size_t>(1, static_cast<std::size_t>(ceiled));
}

bool RouterDecision::is_dropped(std::size_t token) const {
  return assignment.at(token).size() == 1 && assignment[token][0] == kDropped;
}

Tensor router_logits(const Tensor& x_group, const Tensor& w_router) {
  if (x_group.cols() != w_router.rows())
    throw ShapeError("router: tokens of width " + std::to_string(x_group.cols()) + " vs router " +
                     shape_to_string(w_router.shape()));
  return matmul(x_group, w_router);
}

Tensor router_probs(const Tensor& x_group, const Tensor& w_router) {
  return softmax(router_logits(x_group, w_router), 1);
}

RouterDecision tokens_choose_top1(const Tensor& probs, std::size_t capacity, bool bpr, double lb_coef) {
  if (capacity < 1) throw ConfigError("tokens_choose_top1: capacity must be at least 1");
  RouterDecision d = empty_decision(RouterKind::TokensChoose, probs, capacity);
  const std::size_t g = d.num_tokens, e_count = d.num_experts;

  std::vector<std::size_t> top(g);
  for (std::size_t t = 0; t < g; ++t) top[t] = argmax_row(probs, t);
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), 0);
  if (bpr) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probs.at(a, top[a]) > probs.at(b, top[b]);
    });
  }
  for (std::size_t t : order) {
    const std::size_t e = top[t];
    if (d.expert_tokens[e].size() < capacity) {
      d.expert_tokens[e].push_back(t);
      d.combine_weight[e].push_back(probs.at(t, e));
    }
  }
  finalize_assignment(d);

  const std::vector<double> f = top1_fractions(probs);
  double lb = 0.0;
  for (std::size_t e = 0; e < e_count; ++e) {
    // Neumaier summation
    double mass = 0.0, carry = 0.0;
    for (std::size_t t = 0; t < g; ++t) {
      const double v = probs.at(t, e), s = mass + v;
      carry += std::abs(mass) >= std::abs(v) ? (mass - s) + v : (v - s) + mass;
      mass = s;
    }
    lb += f[e] * ((mass + carry) / static_cast<double>(g));
  }
  d.aux_lb_loss = lb_coef * (static_cast<double>(e_count) * lb);
  return d;
}

RouterDecision experts_choose(const Tensor& probs, std::size_t capacity) {
  if (capacity < 1) throw ConfigError("experts_choose: capacity must be at least 1");
  if (capacity > probs.rows())
    throw ConfigError("experts_choose: capacity " + std::to_string(capacity) + " exceeds the " +
                      std::to_string(probs.rows()) + " tokens in the group");
  RouterDecision d = empty_decision(RouterKind::ExpertsChoose, probs, capacity);
  std::vector<std::size_t> order(d.num_tokens);
  for (std::size_t e = 0; e < d.num_experts; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs.at(a, e) > probs.at(b, e); });
    for (std::size_t s = 0; s < capacity; ++s) {
      d.expert_tokens[e].push_back(order[s]);
      d.combine_weight[e].push_back(probs.at(order[s], e));
    }
  }
  finalize_assignment(d);
  return d;
}

double router_z_loss(const Tensor& logits, double z_coef) {
  if (logits.rows() == 0) return 0.0;
  const Tensor lse = logsumexp_rows(logits);
  double acc = 0.0;
  for (double v : lse.data()) acc += v * v;
  return z_coef * acc / static_cast<double>(logits.rows());
}

void init_moe(ParamStore& params, const std::string& prefix, std::size_t d_m, const MoEConfig& cfg,
              double init_std, const Rng& rng) {
  cfg.validate();
  params.add_normal(join(prefix, "router"), {d_m, cfg.num_experts}, init_std, rng);
  for (std::size_t e = 0; e < cfg.num_experts; ++e)
    init_feed_forward(params, expert_prefix(prefix, e), d_m, cfg.expert_d_ff, init_std, rng);
}

Tensor moe_sublayer(const Tensor& x, const MoEConfig& cfg, const ParamStore& params, std::string_view prefix,
                    Mode mode, Rng* rng, AuxLosses* aux, MoECache* cache) {
  cfg.validate();
  const std::size_t tokens = x.rows(), d = x.cols();
  const double cf = mode == Mode::Train ? cfg.cf_train : cfg.cf_eval;
  const Tensor& w_router = params.at(join(prefix, "router"));
  if (w_router.cols() != cfg.num_experts) throw ConfigError("router width does not match num_experts");
  Rng* dropout_rng = mode == Mode::Train ? rng : nullptr;

  Tensor out({tokens, d});
  const std::size_t num_groups = (tokens + cfg.group_size - 1) / cfg.group_size;
  AuxLosses local;
  if (cache) {
    cache->groups.clear();
    cache->num_tokens = tokens;
  }
  for (std::size_t gi = 0; gi < num_groups; ++gi) {
    const std::size_t begin = gi * cfg.group_size;
    const std::size_t len = std::min(cfg.group_size, tokens - begin);
    Tensor xg = slice_rows(x, begin, len);
    const Tensor logits = router_logits(xg, w_router);
    Tensor probs = softmax(logits, 1);
    const std::size_t capacity = expert_capacity(cf, len, cfg.num_experts);
    RouterDecision decision = cfg.router_kind == RouterKind::TokensChoose
                                  ? tokens_choose_top1(probs, capacity, cfg.bpr, cfg.lb_loss_coef)
                                  : experts_choose(probs, capacity);
    decision.aux_z_loss = router_z_loss(logits, cfg.z_loss_coef);
    local.lb += decision.aux_lb_loss / static_cast<double>(num_groups);
    local.z += decision.aux_z_loss / static_cast<double>(num_groups);

    std::vector<FeedForwardCache> expert_cache(cfg.num_experts);
    std::vector<Tensor> expert_out(cfg.num_experts);
    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
      const auto& slots = decision.expert_tokens[e];
      if (slots.empty()) continue;
      Tensor xe({slots.size(), d});
      for (std::size_t s = 0; s < slots.size(); ++s) {
        auto src = xg.row(slots[s]);
        std::copy(src.begin(), src.end(), xe.row(s).begin());
      }
      expert_out[e] = feed_forward(xe, params, expert_prefix(prefix, e), cfg.expert_dropout, dropout_rng,
                                   cache ? &expert_cache[e] : nullptr);
    }
    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
      const auto& slots = decision.expert_tokens[e];
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const double w = decision.combine_weight[e][s];
        auto dst = out.row(begin + slots[s]);
        auto src = expert_out[e].row(s);
        for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    }
    if (cache) {
      MoEGroupCache gc;
      gc.begin = begin;
      gc.lse = logsumexp_rows(logits);
      gc.input = std::move(xg);
      gc.probs = std::move(probs);
      gc.decision = std::move(decision);
      gc.expert_cache = std::move(expert_cache);
      gc.expert_output = std::move(expert_out);
      cache->groups.push_back(std::move(gc));
    }
  }
  if (aux) *aux += local;
  return out;
}

Tensor moe_sublayer_backward(const Tensor& dy, const MoECache& cache, const MoEConfig& cfg,
                             const ParamStore& params, std::string_view prefix, ParamStore& grads,
                             double aux_grad_scale) {
  const std::size_t d = dy.cols();
  const std::size_t num_groups = cache.groups.size();
  const Tensor& w_router = params.at(join(prefix, "router"));
  Tensor& dw_router = grads.at(join(prefix, "router"));
  Tensor dx({cache.num_tokens, d});

  for (const MoEGroupCache& gc : cache.groups) {
    const RouterDecision& dec = gc.decision;
    const std::size_t len = gc.input.rows();
    Tensor dprobs({len, cfg.num_experts});

    for (std::size_t e = 0; e < cfg.num_experts; ++e) {
      const auto& slots = dec.expert_tokens[e];
      if (slots.empty()) continue;
      const Tensor& ye = gc.expert_output[e];
      Tensor dye({slots.size(), d});
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const std::size_t t = slots[s];
        auto g = dy.row(gc.begin + t);
        auto y = ye.row(s);
        const double w = dec.combine_weight[e][s];
        double dw = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dye.at(s, c) = w * g[c];
          dw += g[c] * y[c];
        }
        dprobs.at(t, e) += dw;
      }
      const Tensor dxe = feed_forward_backward(dye, gc.expert_cache[e], params, expert_prefix(prefix, e), grads);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        auto dst = dx.row(gc.begin + slots[s]);
        auto src = dxe.row(s);
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }

    const double group_weight = aux_grad_scale / static_cast<double>(num_groups);
    if (dec.kind == RouterKind::TokensChoose && cfg.lb_loss_coef != 0.0 && aux_grad_scale != 0.0) {
      // lb = α·E·Σ_e f_e·mean_t(p_te); the top-1 fractions f_e are piecewise constant.
      const std::vector<double> f = top1_fractions(gc.probs);
      const double k = group_weight * cfg.lb_loss_coef * static_cast<double>(cfg.num_experts) /
                       static_cast<double>(len);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t e = 0; e < cfg.num_experts; ++e) dprobs.at(t, e) += k * f[e];
    }
    Tensor dlogits = softmax_rows_backward(gc.probs, dprobs);
    if (cfg.z_loss_coef != 0.0 && aux_grad_scale != 0.0) {
      const double k = group_weight * cfg.z_loss_coef * 2.0 / static_cast<double>(len);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t e = 0; e < cfg.num_experts; ++e) dlogits.at(t, e) += k * gc.lse[t] * gc.probs.at(t, e);
    }
    dw_router += matmul_tn(gc.input, dlogits);
    const Tensor dxg = matmul_nt(dlogits, w_router);
    for (std::size_t t = 0; t < len; ++t) {
      auto dst = dx.row(gc.begin + t);
      auto src = dxg.row(t);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  }
  return dx;
}

}  // namespace sparsemix
