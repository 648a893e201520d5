#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hienet {

/// Dense row-major array of doubles tagged with its shape.
///
/// Per-sample activations are rank 2 with shape (length, channels); a batch
/// of them is rank 3 with shape (batch, length, channels), so each sample is
/// one contiguous length x channels block.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  /// Column vector (length x 1) holding a copy of `samples`.
  static Tensor column(std::span<const double> samples);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }

  /// Rank-2 conveniences.
  std::size_t length() const { return extent(0); }
  std::size_t channels() const { return extent(1); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Element (t, c) of a rank-2 tensor.
  double& at(std::size_t t, std::size_t c) { return values_[t * shape_[1] + c]; }
  double at(std::size_t t, std::size_t c) const { return values_[t * shape_[1] + c]; }

  void fill(double v);
  bool all_finite() const;

  /// "19200x10" style rendering of the shape.
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

}  // namespace hienet
