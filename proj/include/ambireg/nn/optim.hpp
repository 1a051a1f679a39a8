#pragma once

#include <cstdint>
#include <vector>

#include "ambireg/nn/layers.hpp"

namespace ambireg::nn {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  ///< L2 term added to the gradient before the moment updates
};

/// Adam with bias correction. Moments are kept per parameter in the order the
/// parameter list was given at construction.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  /// Applies one update from the current gradients. Throws NumericError on a
  /// non-finite gradient (parameters are left untouched in that case).
  void step();

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_count_; }

  const std::vector<Parameter*>& parameters() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t step_count_ = 0;
};

/// base_lr * factor^floor(epoch / decay_every).
double lr_schedule(int epoch, double base_lr, int decay_every = 100, double factor = 0.1);

}  // namespace ambireg::nn
