#include "hienet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "hienet/errors.hpp"

namespace hienet {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw ShapeError("tensor extent " + std::to_string(i) + " must be positive");
    }
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  const std::size_t expected = element_count(shape_);
  if (values_.size() != expected) {
    throw ShapeError("tensor of shape " + shape_string() + " needs " + std::to_string(expected) +
                     " values, got " + std::to_string(values_.size()));
  }
}

Tensor Tensor::column(std::span<const double> samples) {
  return Tensor({samples.size(), 1}, std::vector<double>(samples.begin(), samples.end()));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for tensor of shape " +
                     shape_string());
  }
  return shape_[axis];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string out;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape_[i]);
  }
  return out;
}

}  // namespace hienet
