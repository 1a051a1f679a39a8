#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ambireg/nn/tensor.hpp"
#include "ambireg/rng.hpp"

namespace ambireg::nn {

enum class Mode { train, eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;  ///< false for running statistics (saved, never optimized)
};

enum class Init { fan_in_uniform, zeros };

/// A differentiable stage. forward() caches what backward() needs; backward()
/// accumulates into parameter gradients and returns the input gradient.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual void reseed(std::uint64_t /*seed*/) {}
  virtual std::string kind() const = 0;
};

class Dense : public Layer {
 public:
  Dense(int in_features, int out_features, const std::string& name, Rng& rng, Init init = Init::fan_in_uniform);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string kind() const override { return "dense"; }

  Parameter& weight() { return weight_; }  ///< (out, in)
  Parameter& bias() { return bias_; }

 private:
  int in_;
  int out_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// 3D convolution over (N, C, D, H, W) with zero padding.
class Conv3d : public Layer {
 public:
  Conv3d(int in_channels, int out_channels, std::array<int, 3> kernel, std::array<int, 3> stride,
         std::array<int, 3> padding, const std::string& name, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string kind() const override { return "conv3d"; }

  /// First layers can skip the input gradient.
  void set_input_grad(bool enabled) { input_grad_ = enabled; }

  std::array<int, 3> output_dims(const std::array<int, 3>& in) const;

 private:
  int cin_;
  int cout_;
  std::array<int, 3> k_;
  std::array<int, 3> s_;
  std::array<int, 3> p_;
  Parameter weight_;  ///< (cout, cin, kd, kh, kw)
  Parameter bias_;
  Tensor input_;
  bool input_grad_ = true;
};

/// 2D convolution over (N, C, H, W); runs as a depth-1 Conv3d.
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, const std::string& name, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override { conv_.collect_parameters(out); }
  std::string kind() const override { return "conv2d"; }

  void set_input_grad(bool enabled) { conv_.set_input_grad(enabled); }

 private:
  Conv3d conv_;
  std::vector<int> in_shape_;
};

/// Per-channel normalization over (N, C) or (N, C, spatial...).
class BatchNorm : public Layer {
 public:
  BatchNorm(int channels, const std::string& name, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string kind() const override { return "batchnorm"; }

  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Parameter& running_mean() { return running_mean_; }
  Parameter& running_var() { return running_var_; }

 private:
  int c_;
  double momentum_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
  Parameter running_mean_;
  Parameter running_var_;
  // train-mode cache
  Tensor xhat_;
  std::vector<double> inv_std_;
  Mode last_mode_ = Mode::eval;
};

/// Inverted dropout: kept units are scaled by 1/(1-rate) at train time.
class Dropout : public Layer {
 public:
  explicit Dropout(double rate);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void reseed(std::uint64_t seed) override { rng_.seed(seed); }
  std::string kind() const override { return "dropout"; }

 private:
  double rate_;
  Rng rng_{0};
  std::vector<double> mask_;  ///< empty when the last forward was an identity
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "relu"; }

 private:
  Tensor input_;
};

/// (N, C, spatial...) -> (N, C).
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "global_avg_pool"; }

 private:
  std::vector<int> in_shape_;
};

/// (N, ...) -> (N, prod(...)).
class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args)
  {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  /// Throws NumericError if any intermediate activation is non-finite.
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void reseed(std::uint64_t seed) override;
  std::string kind() const override { return "sequential"; }

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

std::vector<Parameter*> parameters_of(Layer& layer);

/// Zeroes the gradient of every parameter in the list.
void zero_grad(const std::vector<Parameter*>& params);

}  // namespace ambireg::nn
