#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dagkt::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles. Rank-1 tensors behave as a single row.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> v);
  static Tensor vector(std::initializer_list<double> v);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return values.size(); }
  /// Extent of the last axis.
  std::size_t cols() const noexcept { return shape.empty() ? 0 : shape.back(); }
  /// Product of all leading axes.
  std::size_t rows() const noexcept { return cols() ? values.size() / cols() : 0; }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

  bool operator==(const Tensor&) const = default;
};

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad();
};

}  // namespace dagkt::ad
