// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sparsemix/attention.hpp"
#include "sparsemix/errors.hpp"
#include "test_util.hpp"

namespace sparsemix {
namespace {

using testing::random_tensor;

ParamStore random_attention(std::size_t d, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  ParamStore p;
  for (const char* proj : {"q", "k", "v", "o"}) {
    p.add(std::string("att.w_") + proj, random_tensor({d, d}, rng, scale));
    p.add(std::string("att.b_") + proj, random_tensor({d}, rng, scale));
  }
  return p;
}

Tensor eye(std::size_t n) {
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

TEST(Attention, InitShapes) {
  ParamStore p;
  init_attention(p, "att", 8, 0.02, Rng(1));
  EXPECT_EQ(p.size(), 8u);
  EXPECT_EQ(p.at("att.w_o").shape(), (Shape{8, 8}));
  EXPECT_EQ(p.at("att.b_q").shape(), (Shape{8}));
}

TEST(Attention, ZeroQueryKeyGivesUniformMean) {
  const std::size_t n = 5, d = 4;
  ParamStore p;
  p.add("att.w_q", Tensor({d, d}));
  p.add("att.w_k", Tensor({d, d}));
  p.add("att.w_v", eye(d));
  p.add("att.w_o", eye(d));
  for (const char* b : {"att.b_q", "att.b_k", "att.b_v", "att.b_o"}) p.add(b, Tensor({d}));
  Rng rng(2);
  const Tensor x = random_tensor({n, d}, rng);
  const std::vector<double> mask(n, 1.0);
  const Tensor y = self_attention(x, p, "att", 2, mask);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0;
      for (std::size_t r = 0; r < n; ++r) mean += x.at(r, j) / double(n);
      EXPECT_NEAR(y.at(i, j), mean, 1e-14);
    }
}

TEST(Attention, SingleKeyIgnoresQueryAndKey) {
  const std::size_t d = 4;
  const ParamStore p = random_attention(d, 3);
  Rng rng(4);
  const Tensor x = random_tensor({1, d}, rng);
  Tensor v = matmul(x, p.at("att.w_v"));
  add_row_bias(v, p.at("att.b_v"));
  Tensor ref = matmul(v, p.at("att.w_o"));
  add_row_bias(ref, p.at("att.b_o"));
  const std::vector<double> mask = {1.0};
  EXPECT_LT(max_abs_diff(self_attention(x, p, "att", 2, mask), ref), 1e-14);
}

TEST(Attention, MatchesDenseOracle) {
  const std::size_t n = 3, d = 4;
  const ParamStore p = random_attention(d, 5);
  Rng rng(6);
  const Tensor x = random_tensor({n, d}, rng);
  auto proj = [&](const char* w, const char* b) {
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = p.at(b)[j];
        for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * p.at(w).at(k, j);
        out.at(i, j) = s;
      }
    return out;
  };
  const Tensor q = proj("att.w_q", "att.b_q"), k = proj("att.w_k", "att.b_k"), v = proj("att.w_v", "att.b_v");
  Tensor ctx({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double s[3], z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = 0;
      for (std::size_t c = 0; c < d; ++c) s[j] += q.at(i, c) * k.at(j, c);
      s[j] = std::exp(s[j] / 2.0);
      z += s[j];
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) ctx.at(i, c) += s[j] / z * v.at(j, c);
  }
  Tensor ref({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = p.at("att.b_o")[j];
      for (std::size_t c = 0; c < d; ++c) acc += ctx.at(i, c) * p.at("att.w_o").at(c, j);
      ref.at(i, j) = acc;
    }
  const std::vector<double> mask(n, 1.0);
  EXPECT_LT(max_abs_diff(self_attention(x, p, "att", 1, mask), ref), 1e-12);
}

TEST(Attention, PermutationEquivariant) {
  const std::size_t n = 6, d = 8;
  const ParamStore p = random_attention(d, 7);
  Rng rng(8);
  const Tensor x = random_tensor({n, d}, rng);
  const std::size_t perm[n] = {3, 0, 5, 1, 4, 2};
  Tensor px({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) px.at(i, j) = x.at(perm[i], j);
  const std::vector<double> mask(n, 1.0);
  const Tensor y = self_attention(x, p, "att", 2, mask), py = self_attention(px, p, "att", 2, mask);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(py.at(i, j), y.at(perm[i], j), 1e-12);
}

TEST(Attention, MaskedKeysGetZeroWeight) {
  const std::size_t n = 5, d = 4;
  const ParamStore p = random_attention(d, 9);
  Rng rng(10);
  const Tensor x = random_tensor({n, d}, rng);
  const std::vector<double> mask = {1, 1, 0, 1, 0};
  AttentionCache cache;
  const Tensor y = self_attention(x, p, "att", 2, mask, 0.0, nullptr, &cache);
  ASSERT_EQ(cache.probs.size(), 2u);
  for (const Tensor& probs : cache.probs)
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(probs.at(i, 2), 0.0);
      EXPECT_EQ(probs.at(i, 4), 0.0);
    }
  // Changing a masked row of x only changes that row's own output.
  Tensor x2 = x;
  x2.at(2, 1) += 3.0;
  const Tensor y2 = self_attention(x2, p, "att", 2, mask);
  for (std::size_t i : {0u, 1u, 3u, 4u})
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(y2.at(i, j), y.at(i, j), 1e-14);
}

TEST(Attention, Errors) {
  const ParamStore p = random_attention(4, 11);
  const Tensor x({3, 4});
  const std::vector<double> none(3, 0.0), ok(3, 1.0), short_mask(2, 1.0);
  EXPECT_THROW(self_attention(x, p, "att", 3, ok), ConfigError);
  EXPECT_THROW(self_attention(x, p, "att", 2, none), std::invalid_argument);
  EXPECT_THROW(self_attention(x, p, "att", 2, short_mask), ShapeError);
}

TEST(Attention, DropoutOnlyWithRng) {
  const ParamStore p = random_attention(4, 12);
  Rng rng(13);
  const Tensor x = random_tensor({6, 4}, rng);
  const std::vector<double> mask(6, 1.0);
  EXPECT_EQ(self_attention(x, p, "att", 2, mask, 0.5), self_attention(x, p, "att", 2, mask));
  Rng drop(14);
  EXPECT_NE(self_attention(x, p, "att", 2, mask, 0.5, &drop), self_attention(x, p, "att", 2, mask));
}

GradCheckResult check_attention(std::size_t n, std::size_t d, std::size_t heads, std::vector<double> mask,
                                double dropout, std::uint64_t seed) {
  ParamStore p = random_attention(d, seed);
  Rng rng(seed + 1);
  p.add("x", random_tensor({n, d}, rng));
  const Tensor w = random_tensor({n, d}, rng);
  LossFn f = [&](const ParamStore& q, ParamStore* g) {
    Rng drop(seed + 2);
    AttentionCache cache;
    const Tensor y = self_attention(q.at("x"), q, "att", heads, mask, dropout, dropout > 0 ? &drop : nullptr, &cache);
    if (g) g->at("x") += self_attention_backward(w, cache, q, "att", heads, *g);
    return dot(y, w);
  };
  return finite_diff_grad_check(f, p, 1e-5, 200, seed);
}

TEST(Attention, GradientMatchesFiniteDifference) {
  EXPECT_LT(check_attention(4, 4, 1, {1, 1, 1, 1}, 0.0, 20).max_rel_error, 1e-4);
  EXPECT_LT(check_attention(5, 8, 2, {1, 0, 1, 1, 0}, 0.0, 21).max_rel_error, 1e-4);
  EXPECT_LT(check_attention(6, 8, 4, std::vector<double>(6, 1.0), 0.3, 22).max_rel_error, 1e-4);
}

TEST(Attention, KeyBiasHasNoEffect) {
  ParamStore p = random_attention(4, 30);
  Rng rng(31);
  const Tensor x = random_tensor({5, 4}, rng);
  const std::vector<double> mask(5, 1.0);
  const Tensor y = self_attention(x, p, "att", 2, mask);
  p.at("att.b_k") = random_tensor({4}, rng, 5.0);
  EXPECT_LT(max_abs_diff(self_attention(x, p, "att", 2, mask), y), 1e-12);
}

}  // namespace
}  // namespace sparsemix
