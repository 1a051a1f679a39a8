#include "ambireg/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ambireg/error.hpp"

namespace ambireg::nn {

namespace {

void init_uniform(Tensor& t, int fan_in, Rng& rng)
{
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.values()) {
    v = u(rng);
  }
}

Parameter make_param(const std::string& name, std::vector<int> shape, bool trainable = true)
{
  Parameter p;
  p.name = name;
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  p.trainable = trainable;
  return p;
}

// Output indices o in [lo, hi) with 0 <= o*stride + k - pad < in_size.
std::pair<int, int> valid_range(int k, int pad, int stride, int in_size, int out_size)
{
  const int num_lo = pad - k;
  int lo = num_lo <= 0 ? 0 : (num_lo + stride - 1) / stride;
  const int num_hi = in_size - 1 + pad - k;
  int hi = num_hi < 0 ? 0 : num_hi / stride + 1;
  lo = std::max(lo, 0);
  hi = std::min(hi, out_size);
  return {lo, std::max(lo, hi)};
}

void require_rank(const Tensor& x, std::size_t rank, const char* who)
{
  if (x.rank() != rank) {
    throw ParameterError(fmt::format("{} expects rank-{} input, got {}", who, rank, x.shape_string()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features, const std::string& name, Rng& rng, Init init)
    : in_(in_features),
      out_(out_features),
      weight_(make_param(name + ".weight", {out_features, in_features})),
      bias_(make_param(name + ".bias", {out_features}))
{
  if (init == Init::fan_in_uniform) {
    init_uniform(weight_.value, in_features, rng);
  }
}

Tensor Dense::forward(const Tensor& x, Mode)
{
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ParameterError(fmt::format("dense {} expects (N, {}), got {}", weight_.name, in_, x.shape_string()));
  }
  input_ = x;
  const int n = x.dim(0);
  Tensor y({n, out_});
  const double* w = weight_.value.data();
  const double* b = bias_.value.data();
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + std::size_t(i) * in_;
    double* yi = y.data() + std::size_t(i) * out_;
    for (int o = 0; o < out_; ++o) {
      const double* wo = w + std::size_t(o) * in_;
      double acc = b[o];
      for (int k = 0; k < in_; ++k) {
        acc += wo[k] * xi[k];
      }
      yi[o] = acc;
    }
  }
  return y;
}

Tensor Dense::backward(const Tensor& grad_out)
{
  const int n = input_.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != out_) {
    throw ParameterError("dense backward shape mismatch " + grad_out.shape_string());
  }
  Tensor gx({n, in_});
  const double* w = weight_.value.data();
  double* gw = weight_.grad.data();
  double* gb = bias_.grad.data();
  for (int i = 0; i < n; ++i) {
    const double* xi = input_.data() + std::size_t(i) * in_;
    const double* gi = grad_out.data() + std::size_t(i) * out_;
    double* gxi = gx.data() + std::size_t(i) * in_;
    for (int o = 0; o < out_; ++o) {
      const double g = gi[o];
      if (g == 0.0) {
        continue;
      }
      gb[o] += g;
      const double* wo = w + std::size_t(o) * in_;
      double* gwo = gw + std::size_t(o) * in_;
      for (int k = 0; k < in_; ++k) {
        gwo[k] += g * xi[k];
        gxi[k] += g * wo[k];
      }
    }
  }
  return gx;
}

void Dense::collect_parameters(std::vector<Parameter*>& out)
{
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------- Conv3d

Conv3d::Conv3d(int in_channels, int out_channels, std::array<int, 3> kernel, std::array<int, 3> stride,
               std::array<int, 3> padding, const std::string& name, Rng& rng)
    : cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      s_(stride),
      p_(padding),
      weight_(make_param(name + ".weight", {out_channels, in_channels, kernel[0], kernel[1], kernel[2]})),
      bias_(make_param(name + ".bias", {out_channels}))
{
  init_uniform(weight_.value, in_channels * kernel[0] * kernel[1] * kernel[2], rng);
}

std::array<int, 3> Conv3d::output_dims(const std::array<int, 3>& in) const
{
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = (in[a] + 2 * p_[a] - k_[a]) / s_[a] + 1;
    if (out[a] <= 0) {
      throw ParameterError(fmt::format("conv {} input too small", weight_.name));
    }
  }
  return out;
}

Tensor Conv3d::forward(const Tensor& x, Mode)
{
  require_rank(x, 5, "conv3d");
  if (x.dim(1) != cin_) {
    throw ParameterError(fmt::format("conv {} expects {} channels, got {}", weight_.name, cin_, x.shape_string()));
  }
  input_ = x;
  const int n = x.dim(0);
  const std::array<int, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto od = output_dims(in);
  Tensor y({n, cout_, od[0], od[1], od[2]});

  const std::size_t in_plane = std::size_t(in[1]) * in[2];
  const std::size_t in_vol = in_plane * in[0];
  const std::size_t out_plane = std::size_t(od[1]) * od[2];
  const std::size_t out_vol = out_plane * od[0];
  const double* w = weight_.value.data();

  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout_; ++co) {
      double* yv = y.data() + (std::size_t(b) * cout_ + co) * out_vol;
      std::fill(yv, yv + out_vol, bias_.value[co]);
      for (int ci = 0; ci < cin_; ++ci) {
        const double* xv = x.data() + (std::size_t(b) * cin_ + ci) * in_vol;
        for (int kd = 0; kd < k_[0]; ++kd) {
          const auto [d0, d1] = valid_range(kd, p_[0], s_[0], in[0], od[0]);
          for (int kh = 0; kh < k_[1]; ++kh) {
            const auto [h0, h1] = valid_range(kh, p_[1], s_[1], in[1], od[1]);
            for (int kw = 0; kw < k_[2]; ++kw) {
              const auto [w0, w1] = valid_range(kw, p_[2], s_[2], in[2], od[2]);
              const double wt = w[(((std::size_t(co) * cin_ + ci) * k_[0] + kd) * k_[1] + kh) * k_[2] + kw];
              for (int o_d = d0; o_d < d1; ++o_d) {
                const int i_d = o_d * s_[0] + kd - p_[0];
                for (int o_h = h0; o_h < h1; ++o_h) {
                  const int i_h = o_h * s_[1] + kh - p_[1];
                  const std::ptrdiff_t base = std::ptrdiff_t(i_d * in_plane + std::size_t(i_h) * in[2]) + kw - p_[2];
                  double* yr = yv + o_d * out_plane + std::size_t(o_h) * od[2];
                  const int sw = s_[2];
                  for (int o_w = w0; o_w < w1; ++o_w) {
                    yr[o_w] += wt * xv[base + o_w * sw];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv3d::backward(const Tensor& grad_out)
{
  const int n = input_.dim(0);
  const std::array<int, 3> in{input_.dim(2), input_.dim(3), input_.dim(4)};
  const auto od = output_dims(in);
  if (grad_out.shape() != std::vector<int>{n, cout_, od[0], od[1], od[2]}) {
    throw ParameterError("conv backward shape mismatch " + grad_out.shape_string());
  }
  Tensor gx;
  if (input_grad_) {
    gx = Tensor(input_.shape());
  }
  const std::size_t in_plane = std::size_t(in[1]) * in[2];
  const std::size_t in_vol = in_plane * in[0];
  const std::size_t out_plane = std::size_t(od[1]) * od[2];
  const std::size_t out_vol = out_plane * od[0];
  const double* w = weight_.value.data();
  double* gw = weight_.grad.data();

  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < cout_; ++co) {
      const double* gv = grad_out.data() + (std::size_t(b) * cout_ + co) * out_vol;
      double gb = 0.0;
      for (std::size_t i = 0; i < out_vol; ++i) {
        gb += gv[i];
      }
      bias_.grad[co] += gb;
      for (int ci = 0; ci < cin_; ++ci) {
        const double* xv = input_.data() + (std::size_t(b) * cin_ + ci) * in_vol;
        double* gxv = input_grad_ ? gx.data() + (std::size_t(b) * cin_ + ci) * in_vol : nullptr;
        for (int kd = 0; kd < k_[0]; ++kd) {
          const auto [d0, d1] = valid_range(kd, p_[0], s_[0], in[0], od[0]);
          for (int kh = 0; kh < k_[1]; ++kh) {
            const auto [h0, h1] = valid_range(kh, p_[1], s_[1], in[1], od[1]);
            for (int kw = 0; kw < k_[2]; ++kw) {
              const auto [w0, w1] = valid_range(kw, p_[2], s_[2], in[2], od[2]);
              const std::size_t widx = (((std::size_t(co) * cin_ + ci) * k_[0] + kd) * k_[1] + kh) * k_[2] + kw;
              const double wt = w[widx];
              double gacc = 0.0;
              const int sw = s_[2];
              for (int o_d = d0; o_d < d1; ++o_d) {
                const int i_d = o_d * s_[0] + kd - p_[0];
                for (int o_h = h0; o_h < h1; ++o_h) {
                  const int i_h = o_h * s_[1] + kh - p_[1];
                  const std::ptrdiff_t base = std::ptrdiff_t(i_d * in_plane + std::size_t(i_h) * in[2]) + kw - p_[2];
                  const double* gr = gv + o_d * out_plane + std::size_t(o_h) * od[2];
                  for (int o_w = w0; o_w < w1; ++o_w) {
                    gacc += gr[o_w] * xv[base + o_w * sw];
                  }
                  if (gxv) {
                    for (int o_w = w0; o_w < w1; ++o_w) {
                      gxv[base + o_w * sw] += wt * gr[o_w];
                    }
                  }
                }
              }
              gw[widx] += gacc;
            }
          }
        }
      }
    }
  }
  return gx;
}

void Conv3d::collect_parameters(std::vector<Parameter*>& out)
{
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, const std::string& name,
               Rng& rng)
    : conv_(in_channels, out_channels, {1, kernel, kernel}, {1, stride, stride}, {0, padding, padding}, name, rng)
{
}

Tensor Conv2d::forward(const Tensor& x, Mode mode)
{
  require_rank(x, 4, "conv2d");
  in_shape_ = x.shape();
  const Tensor y = conv_.forward(x.reshaped({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)}), mode);
  return y.reshaped({y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
}

Tensor Conv2d::backward(const Tensor& grad_out)
{
  require_rank(grad_out, 4, "conv2d backward");
  const Tensor gx =
      conv_.backward(grad_out.reshaped({grad_out.dim(0), grad_out.dim(1), 1, grad_out.dim(2), grad_out.dim(3)}));
  return gx.empty() ? gx : gx.reshaped(in_shape_);
}

// ---------------------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, const std::string& name, double momentum, double eps)
    : c_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(make_param(name + ".gamma", {channels})),
      beta_(make_param(name + ".beta", {channels})),
      running_mean_(make_param(name + ".running_mean", {channels}, false)),
      running_var_(make_param(name + ".running_var", {channels}, false))
{
  gamma_.value.fill(1.0);
  running_var_.value.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode)
{
  if (x.rank() < 2 || x.dim(1) != c_) {
    throw ParameterError(fmt::format("batchnorm {} expects (N, {}, ...), got {}", gamma_.name, c_, x.shape_string()));
  }
  const int n = x.dim(0);
  const std::size_t spatial = x.size() / (std::size_t(n) * c_);
  const std::size_t count = spatial * n;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  inv_std_.assign(c_, 0.0);
  last_mode_ = mode;

  for (int c = 0; c < c_; ++c) {
    double mean;
    double var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* xv = x.data() + (std::size_t(b) * c_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          acc += xv[s];
        }
      }
      mean = acc / count;
      double sq = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* xv = x.data() + (std::size_t(b) * c_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = xv[s] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean_.value[c] = (1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      running_var_.value[c] = (1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv_std;
    const double g = gamma_.value[c];
    const double be = beta_.value[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (std::size_t(b) * c_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const double xh = (x[off + s] - mean) * inv_std;
        xhat_[off + s] = xh;
        y[off + s] = g * xh + be;
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out)
{
  if (grad_out.shape() != xhat_.shape()) {
    throw ParameterError("batchnorm backward shape mismatch " + grad_out.shape_string());
  }
  const int n = grad_out.dim(0);
  const std::size_t spatial = grad_out.size() / (std::size_t(n) * c_);
  const double count = static_cast<double>(spatial * n);
  Tensor gx(grad_out.shape());
  for (int c = 0; c < c_; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (std::size_t(b) * c_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        sum_g += grad_out[off + s];
        sum_gx += grad_out[off + s] * xhat_[off + s];
      }
    }
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const double g = gamma_.value[c];
    const double inv_std = inv_std_[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (std::size_t(b) * c_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        if (last_mode_ == Mode::train) {
          gx[off + s] = g * inv_std * (grad_out[off + s] - sum_g / count - xhat_[off + s] * sum_gx / count);
        } else {
          gx[off + s] = g * inv_std * grad_out[off + s];
        }
      }
    }
  }
  return gx;
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out)
{
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate)
{
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0, 1)");
  }
}

Tensor Dropout::forward(const Tensor& x, Mode mode)
{
  if (mode == Mode::eval || rate_ == 0.0) {
    mask_.clear();
    return x;
  }
  const double keep = 1.0 - rate_;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = u(rng_) < keep ? 1.0 / keep : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out)
{
  if (mask_.empty()) {
    return grad_out;
  }
  if (grad_out.size() != mask_.size()) {
    throw ParameterError("dropout backward shape mismatch");
  }
  Tensor gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = grad_out[i] * mask_[i];
  }
  return gx;
}

// ---------------------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, Mode)
{
  input_ = x;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  return y;
}

Tensor Relu::backward(const Tensor& grad_out)
{
  if (grad_out.size() != input_.size()) {
    throw ParameterError("relu backward shape mismatch");
  }
  Tensor gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return gx;
}

// ---------------------------------------------------------------------------- pooling

Tensor GlobalAvgPool::forward(const Tensor& x, Mode)
{
  if (x.rank() < 3) {
    throw ParameterError("global_avg_pool expects (N, C, spatial...), got " + x.shape_string());
  }
  in_shape_ = x.shape();
  const int n = x.dim(0);
  const int c = x.dim(1);
  const std::size_t spatial = x.size() / (std::size_t(n) * c);
  Tensor y({n, c});
  for (std::size_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < spatial; ++s) {
      acc += x[i * spatial + s];
    }
    y[i] = acc / spatial;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out)
{
  Tensor gx(in_shape_);
  const std::size_t spatial = gx.size() / grad_out.size();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i] / spatial;
    std::fill_n(gx.data() + i * spatial, spatial, g);
  }
  return gx;
}

Tensor Flatten::forward(const Tensor& x, Mode)
{
  in_shape_ = x.shape();
  return x.reshaped({x.dim(0), static_cast<int>(x.size() / x.dim(0))});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

// ---------------------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode)
{
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode);
    if (!h.all_finite()) {
      throw NumericError(fmt::format("non-finite activation after layer {} ({})", i, layers_[i]->kind()));
    }
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out)
{
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
  }
  return g;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out)
{
  for (auto& l : layers_) {
    l->collect_parameters(out);
  }
}

void Sequential::reseed(std::uint64_t seed)
{
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->reseed(mix_seed(seed, i));
  }
}

std::vector<Parameter*> parameters_of(Layer& layer)
{
  std::vector<Parameter*> out;
  layer.collect_parameters(out);
  return out;
}

void zero_grad(const std::vector<Parameter*>& params)
{
  for (Parameter* p : params) {
    p->grad.fill(0.0);
  }
}

}  // namespace ambireg::nn
