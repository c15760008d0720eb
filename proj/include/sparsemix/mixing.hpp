// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// Token-mixing sublayer choices. SelfAttention is handled by attention.hpp.
enum class MixingKind { Fourier, Hartley, Linear, Toeplitz, Circulant, SelfAttention };

std::string_view to_string(MixingKind kind) noexcept;
MixingKind parse_mixing_kind(std::string_view name);
bool is_parameterized(MixingKind kind) noexcept;

// All sublayers take one sequence x of shape (n, d_m) and return the same shape.
// Hidden-axis mixing is applied first, then sequence-axis mixing.

/// y = Re(F_seq(F_h(x))). Parameter-free.
Tensor fourier_sublayer(const Tensor& x);
/// y = H_seq(H_h(x)). Parameter-free.
Tensor hartley_sublayer(const Tensor& x);

// Both spectral maps are self-adjoint (the DFT and DHT matrices are symmetric),
// so their backward pass is the same transform applied to dL/dy.
Tensor fourier_sublayer_backward(const Tensor& dy);
Tensor hartley_sublayer_backward(const Tensor& dy);

/// y = M_seq · x · M_hᵀ, no bias.
Tensor linear_sublayer(const Tensor& x, const Tensor& m_seq, const Tensor& m_h);
/// Returns dL/dx; accumulates into dm_seq and dm_h.
Tensor linear_sublayer_backward(const Tensor& dy, const Tensor& x, const Tensor& m_seq, const Tensor& m_h,
                                Tensor& dm_seq, Tensor& dm_h);

/// M[i][j] = diagonals[i - j + n - 1]; `diagonals` has length 2n - 1.
Tensor toeplitz_matrix(const Tensor& diagonals);
/// M[i][j] = column[(i - j) mod n]; row r is row 0 rotated r places to the right.
Tensor circulant_matrix(const Tensor& column);
/// Folds a dense-matrix gradient back onto the generating vector.
void accumulate_toeplitz_grad(const Tensor& dmatrix, Tensor& ddiagonals);
void accumulate_circulant_grad(const Tensor& dmatrix, Tensor& dcolumn);

enum class StructuredKind { Toeplitz, Circulant };

/// Materializes the structured seq/hidden matrices and applies them as in
/// linear_sublayer (dense product, no FFT).
Tensor structured_sublayer(const Tensor& x, StructuredKind kind, const Tensor& seq_param,
                           const Tensor& hidden_param);
Tensor structured_sublayer_backward(const Tensor& dy, const Tensor& x, StructuredKind kind,
                                    const Tensor& seq_param, const Tensor& hidden_param, Tensor& dseq_param,
                                    Tensor& dhidden_param);

/// Circular convolution c ⊛ v via forward DFTs, a pointwise product and an
/// inverse DFT. Equals circulant_matrix(c) · v.
Tensor circulant_apply_fft(const Tensor& c, const Tensor& v);

}  // namespace sparsemix
