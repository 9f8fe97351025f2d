#include "tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "errors.hpp"

namespace dagkt::ad {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  values.assign(element_count(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (values.size() != element_count(shape)) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> v) {
  return Tensor({rows, cols}, std::vector<double>(v));
}

Tensor Tensor::vector(std::initializer_list<double> v) {
  return Tensor({v.size()}, std::vector<double>(v));
}

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape);
  std::fill(grad.values.begin(), grad.values.end(), 0.0);
}

}  // namespace dagkt::ad
