// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#include "sparsemix/transforms.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace sparsemix {
namespace {

using cd = std::complex<double>;

// e^{sign * 2πi * k / n}, with k reduced mod n so large products stay exact.
cd twiddle(std::size_t k, std::size_t n, double sign) {
  const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k % n) / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

void fft_radix2(std::span<cd> a, double sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cd w = twiddle(k, len, sign);
        const cd u = a[start + k];
        const cd v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

void dft_matrix(std::span<cd> a, double sign) {
  const std::size_t n = a.size();
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc{0.0, 0.0};
    for (std::size_t j = 0; j < n; ++j) acc += a[j] * twiddle(j * k, n, sign);
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

struct AxisGeometry {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisGeometry geometry(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw ShapeError("transform axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape));
  AxisGeometry g;
  for (std::size_t i = 0; i < axis; ++i) g.outer *= shape[i];
  g.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) g.inner *= shape[i];
  if (g.length == 0) throw ShapeError("transform axis has zero extent");
  return g;
}

// Applies `fn` to every 1-D line along `axis`, gathering into a contiguous buffer.
template <typename Fn>
ComplexTensor for_each_line(const Tensor& re, const Tensor* im, std::size_t axis, Fn&& fn) {
  const AxisGeometry g = geometry(re.shape(), axis);
  ComplexTensor out(re.shape());
  std::vector<cd> line(g.length);
  for (std::size_t o = 0; o < g.outer; ++o) {
    for (std::size_t i = 0; i < g.inner; ++i) {
      const std::size_t base = o * g.length * g.inner + i;
      for (std::size_t k = 0; k < g.length; ++k) {
        const std::size_t idx = base + k * g.inner;
        line[k] = cd(re[idx], im ? (*im)[idx] : 0.0);
      }
      fn(std::span<cd>(line));
      for (std::size_t k = 0; k < g.length; ++k) {
        const std::size_t idx = base + k * g.inner;
        out.real[idx] = line[k].real();
        out.imag[idx] = line[k].imag();
      }
    }
  }
  return out;
}

}  // namespace

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

void dft_line(std::span<cd> line, bool inverse, DftMethod method) {
  const double sign = inverse ? 1.0 : -1.0;
  const bool use_fft = method == DftMethod::Fft || (method == DftMethod::Auto && is_power_of_two(line.size()));
  if (use_fft) {
    if (!is_power_of_two(line.size()))
      throw ShapeError("radix-2 FFT requires a power-of-two length, got " + std::to_string(line.size()));
    fft_radix2(line, sign);
  } else {
    dft_matrix(line, sign);
  }
}

ComplexTensor dft_1d(const Tensor& x, std::size_t axis, DftMethod method) {
  return for_each_line(x, nullptr, axis, [method](std::span<cd> line) { dft_line(line, false, method); });
}

ComplexTensor dft_1d(const ComplexTensor& x, std::size_t axis, DftMethod method) {
  return for_each_line(x.real, &x.imag, axis, [method](std::span<cd> line) { dft_line(line, false, method); });
}

ComplexTensor idft_1d(const ComplexTensor& x, std::size_t axis, DftMethod method) {
  return for_each_line(x.real, &x.imag, axis, [method](std::span<cd> line) {
    dft_line(line, true, method);
    const double scale = 1.0 / static_cast<double>(line.size());
    for (cd& v : line) v *= scale;
  });
}

Tensor dht_1d(const Tensor& x, std::size_t axis, DftMethod method) {
  const AxisGeometry g = geometry(x.shape(), axis);
  const bool use_fft = method == DftMethod::Fft || (method == DftMethod::Auto && is_power_of_two(g.length));
  if (use_fft) {
    ComplexTensor f = dft_1d(x, axis, DftMethod::Fft);
    Tensor out = f.real;
    out -= f.imag;
    return out;
  }
  // Direct cas-kernel sum: H_k = Σ_j x_j (cos θ_jk + sin θ_jk), θ_jk = 2πjk/N.
  Tensor out(x.shape());
  std::vector<double> cas(g.length);
  for (std::size_t m = 0; m < g.length; ++m) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(g.length);
    cas[m] = std::cos(angle) + std::sin(angle);
  }
  for (std::size_t o = 0; o < g.outer; ++o) {
    for (std::size_t i = 0; i < g.inner; ++i) {
      const std::size_t base = o * g.length * g.inner + i;
      for (std::size_t k = 0; k < g.length; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.length; ++j) acc += x[base + j * g.inner] * cas[(j * k) % g.length];
        out[base + k * g.inner] = acc;
      }
    }
  }
  return out;
}

}  // namespace sparsemix
