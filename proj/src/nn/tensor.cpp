#include "ambireg/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ambireg/error.hpp"

namespace ambireg::nn {

std::size_t shape_size(const std::vector<int>& shape)
{
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw ParameterError("negative tensor dimension");
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor Tensor::reshaped(std::vector<int> shape) const
{
  if (shape_size(shape) != size()) {
    throw ParameterError(fmt::format("cannot reshape {} to [{}]", shape_string(), fmt::join(shape, ", ")));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const
{
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Tensor::shape_string() const { return fmt::format("[{}]", fmt::join(shape_, ", ")); }

Tensor concat_columns(const Tensor& a, const Tensor& b)
{
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ParameterError(fmt::format("concat_columns shape mismatch {} vs {}", a.shape_string(), b.shape_string()));
  }
  const int n = a.dim(0);
  const int ca = a.dim(1);
  const int cb = b.dim(1);
  Tensor out({n, ca + cb});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + std::size_t(i) * ca, ca, out.data() + std::size_t(i) * (ca + cb));
    std::copy_n(b.data() + std::size_t(i) * cb, cb, out.data() + std::size_t(i) * (ca + cb) + ca);
  }
  return out;
}

void split_columns(const Tensor& t, int a_cols, Tensor& a, Tensor& b)
{
  if (t.rank() != 2 || a_cols < 0 || a_cols > t.dim(1)) {
    throw ParameterError("split_columns shape mismatch " + t.shape_string());
  }
  const int n = t.dim(0);
  const int c = t.dim(1);
  const int cb = c - a_cols;
  a = Tensor({n, a_cols});
  b = Tensor({n, cb});
  for (int i = 0; i < n; ++i) {
    std::copy_n(t.data() + std::size_t(i) * c, a_cols, a.data() + std::size_t(i) * a_cols);
    std::copy_n(t.data() + std::size_t(i) * c + a_cols, cb, b.data() + std::size_t(i) * cb);
  }
}

}  // namespace ambireg::nn
