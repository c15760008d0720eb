// Copyright 2026 The sparsemix Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sparsemix/errors.hpp"

namespace sparsemix {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }

  /// Rows / cols of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// Paired real/imaginary buffers sharing one shape.
struct ComplexTensor {
  Tensor real;
  Tensor imag;

  ComplexTensor() = default;
  explicit ComplexTensor(const Shape& shape) : real(shape), imag(shape) {}
  ComplexTensor(Tensor re, Tensor im);

  const Shape& shape() const noexcept { return real.shape(); }
  std::size_t numel() const noexcept { return real.numel(); }
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Rank-2 products. Shapes are checked; all loops run in a fixed order.
Tensor matmul(const Tensor& a, const Tensor& b);      // a · b
Tensor matmul_tn(const Tensor& a, const Tensor& b);   // aᵀ · b
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // a · bᵀ
Tensor transpose(const Tensor& a);

/// Adds `bias` (length cols) to every row of `x`.
void add_row_bias(Tensor& x, const Tensor& bias);
/// Accumulates the column sums of `x` into `out` (length cols).
void accumulate_col_sums(const Tensor& x, Tensor& out);

Tensor hadamard(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
/// max |a-b| / max(max |b|, tiny).
double max_rel_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);

/// Copy of rows [begin, begin+count) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
void set_rows(Tensor& dst, std::size_t begin, const Tensor& src);

}  // namespace sparsemix
