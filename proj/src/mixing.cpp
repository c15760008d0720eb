// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/mixing.hpp"

#include <array>
#include <utility>

#include "sparsemix/transforms.hpp"

namespace sparsemix {
namespace {

constexpr std::array<std::pair<MixingKind, std::string_view>, 6> kMixingNames{{
    {MixingKind::Fourier, "Fourier"},
    {MixingKind::Hartley, "Hartley"},
    {MixingKind::Linear, "Linear"},
    {MixingKind::Toeplitz, "Toeplitz"},
    {MixingKind::Circulant, "Circulant"},
    {MixingKind::SelfAttention, "SelfAttention"},
}};

void require_sequence(const Tensor& x, const char* what) {
  if (x.rank() != 2) throw ShapeError(std::string(what) + ": expected (n, d_m), got " + shape_to_string(x.shape()));
}

void require_square(const Tensor& m, std::size_t n, const char* what) {
  if (m.rank() != 2 || m.rows() != n || m.cols() != n)
    throw ShapeError(std::string(what) + ": expected (" + std::to_string(n) + ", " + std::to_string(n) + "), got " +
                     shape_to_string(m.shape()));
}

Tensor materialize(StructuredKind kind, const Tensor& param, std::size_t n, const char* axis) {
  const std::size_t want = kind == StructuredKind::Toeplitz ? 2 * n - 1 : n;
  if (param.numel() != want)
    throw ShapeError(std::string(kind == StructuredKind::Toeplitz ? "Toeplitz" : "circulant") + " " + axis +
                     " parameter must have length " + std::to_string(want) + ", got " +
                     std::to_string(param.numel()));
  return kind == StructuredKind::Toeplitz ? toeplitz_matrix(param) : circulant_matrix(param);
}

}  // namespace

std::string_view to_string(MixingKind kind) noexcept {
  for (const auto& [k, name] : kMixingNames)
    if (k == kind) return name;
  return "?";
}

MixingKind parse_mixing_kind(std::string_view name) {
  for (const auto& [k, n] : kMixingNames)
    if (n == name) return k;
  if (name == "Attention") return MixingKind::SelfAttention;
  throw std::invalid_argument("unknown mixing kind '" + std::string(name) + "'");
}

bool is_parameterized(MixingKind kind) noexcept {
  return kind != MixingKind::Fourier && kind != MixingKind::Hartley;
}

Tensor fourier_sublayer(const Tensor& x) {
  require_sequence(x, "fourier_sublayer");
  ComplexTensor hidden = dft_1d(x, 1);
  return dft_1d(hidden, 0).real;
}

Tensor hartley_sublayer(const Tensor& x) {
  require_sequence(x, "hartley_sublayer");
  return dht_1d(dht_1d(x, 1), 0);
}

Tensor fourier_sublayer_backward(const Tensor& dy) { return fourier_sublayer(dy); }
Tensor hartley_sublayer_backward(const Tensor& dy) { return hartley_sublayer(dy); }

Tensor linear_sublayer(const Tensor& x, const Tensor& m_seq, const Tensor& m_h) {
  require_sequence(x, "linear_sublayer");
  require_square(m_seq, x.rows(), "linear_sublayer m_seq");
  require_square(m_h, x.cols(), "linear_sublayer m_h");
  return matmul(m_seq, matmul_nt(x, m_h));
}

Tensor linear_sublayer_backward(const Tensor& dy, const Tensor& x, const Tensor& m_seq, const Tensor& m_h,
                                Tensor& dm_seq, Tensor& dm_h) {
  require_same_shape(dy, x, "linear_sublayer_backward");
  const Tensor hidden_mixed = matmul_nt(x, m_h);
  const Tensor dhidden = matmul_tn(m_seq, dy);
  dm_seq += matmul_nt(dy, hidden_mixed);
  dm_h += matmul_tn(dhidden, x);
  return matmul(dhidden, m_h);
}

Tensor toeplitz_matrix(const Tensor& diagonals) {
  const std::size_t len = diagonals.numel();
  if (len % 2 == 0) throw ShapeError("Toeplitz diagonal vector must have odd length 2n-1");
  const std::size_t n = (len + 1) / 2;
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.at(i, j) = diagonals[i + n - 1 - j];
  return m;
}

Tensor circulant_matrix(const Tensor& column) {
  const std::size_t n = column.numel();
  if (n == 0) throw ShapeError("circulant column must be non-empty");
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.at(i, j) = column[(i + n - j) % n];
  return m;
}

void accumulate_toeplitz_grad(const Tensor& dmatrix, Tensor& ddiagonals) {
  const std::size_t n = dmatrix.rows();
  if (ddiagonals.numel() != 2 * n - 1) throw ShapeError("Toeplitz gradient length mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ddiagonals[i + n - 1 - j] += dmatrix.at(i, j);
}

void accumulate_circulant_grad(const Tensor& dmatrix, Tensor& dcolumn) {
  const std::size_t n = dmatrix.rows();
  if (dcolumn.numel() != n) throw ShapeError("circulant gradient length mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dcolumn[(i + n - j) % n] += dmatrix.at(i, j);
}

Tensor structured_sublayer(const Tensor& x, StructuredKind kind, const Tensor& seq_param,
                           const Tensor& hidden_param) {
  require_sequence(x, "structured_sublayer");
  const Tensor m_seq = materialize(kind, seq_param, x.rows(), "sequence");
  const Tensor m_h = materialize(kind, hidden_param, x.cols(), "hidden");
  return linear_sublayer(x, m_seq, m_h);
}

Tensor structured_sublayer_backward(const Tensor& dy, const Tensor& x, StructuredKind kind,
                                    const Tensor& seq_param, const Tensor& hidden_param, Tensor& dseq_param,
                                    Tensor& dhidden_param) {
  const Tensor m_seq = materialize(kind, seq_param, x.rows(), "sequence");
  const Tensor m_h = materialize(kind, hidden_param, x.cols(), "hidden");
  Tensor dm_seq(m_seq.shape()), dm_h(m_h.shape());
  Tensor dx = linear_sublayer_backward(dy, x, m_seq, m_h, dm_seq, dm_h);
  if (kind == StructuredKind::Toeplitz) {
    accumulate_toeplitz_grad(dm_seq, dseq_param);
    accumulate_toeplitz_grad(dm_h, dhidden_param);
  } else {
    accumulate_circulant_grad(dm_seq, dseq_param);
    accumulate_circulant_grad(dm_h, dhidden_param);
  }
  return dx;
}

Tensor circulant_apply_fft(const Tensor& c, const Tensor& v) {
  if (c.numel() != v.numel())
    throw ShapeError("circulant_apply_fft: length " + std::to_string(c.numel()) + " vs " +
                     std::to_string(v.numel()));
  const Tensor cc = c.reshaped({c.numel()});
  const Tensor vv = v.reshaped({v.numel()});
  const ComplexTensor fc = dft_1d(cc, 0);
  const ComplexTensor fv = dft_1d(vv, 0);
  ComplexTensor prod(fc.shape());
  for (std::size_t k = 0; k < fc.numel(); ++k) {
    prod.real[k] = fc.real[k] * fv.real[k] - fc.imag[k] * fv.imag[k];
    prod.imag[k] = fc.real[k] * fv.imag[k] + fc.imag[k] * fv.real[k];
  }
  return idft_1d(prod, 0).real.reshaped(v.shape());
}

}  // namespace sparsemix
