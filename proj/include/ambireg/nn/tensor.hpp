#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ambireg::nn {

/// Dense row-major array of doubles. Batched activations use NCHW / NCDHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape with equal element count.
  Tensor reshaped(std::vector<int> shape) const;

  void fill(double v);
  bool all_finite() const;

  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<int>& shape);

/// Concatenates two (N, a) and (N, b) tensors into (N, a+b).
Tensor concat_columns(const Tensor& a, const Tensor& b);

/// Splits (N, a+b) into (N, a) and (N, b).
void split_columns(const Tensor& t, int a_cols, Tensor& a, Tensor& b);

}  // namespace ambireg::nn
