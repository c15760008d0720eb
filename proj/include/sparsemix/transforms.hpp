// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "sparsemix/tensor.hpp"

namespace sparsemix {

/// How a 1-D transform is evaluated. `Auto` picks the radix-2 FFT for
/// power-of-two lengths and the explicit DFT-matrix product otherwise.
enum class DftMethod { Auto, Fft, Matrix };

bool is_power_of_two(std::size_t n) noexcept;

/// In-place unnormalized 1-D DFT of a contiguous line (sign -1), or the
/// unnormalized inverse kernel (sign +1) when `inverse` is set.
void dft_line(std::span<std::complex<double>> line, bool inverse, DftMethod method = DftMethod::Auto);

/// Unnormalized forward DFT along `axis`; output shape equals input shape.
ComplexTensor dft_1d(const Tensor& x, std::size_t axis, DftMethod method = DftMethod::Auto);
ComplexTensor dft_1d(const ComplexTensor& x, std::size_t axis, DftMethod method = DftMethod::Auto);

/// Inverse DFT along `axis`, normalized by 1/N so idft(dft(x)) == x.
ComplexTensor idft_1d(const ComplexTensor& x, std::size_t axis, DftMethod method = DftMethod::Auto);

/// Real-to-real discrete Hartley transform along `axis`: Re(DFT) - Im(DFT).
Tensor dht_1d(const Tensor& x, std::size_t axis, DftMethod method = DftMethod::Auto);

}  // namespace sparsemix
