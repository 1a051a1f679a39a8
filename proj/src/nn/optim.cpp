#include "ambireg/nn/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ambireg/error.hpp"

namespace ambireg::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
  for (Parameter* p : params_) {
    if (!p->trainable) {
      throw ParameterError("Adam given non-trainable parameter " + p->name);
    }
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step()
{
  for (const Parameter* p : params_) {
    if (!p->grad.all_finite()) {
      throw NumericError(fmt::format("non-finite gradient for parameter {}", p->name));
    }
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + cfg_.weight_decay * p.value[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

double lr_schedule(int epoch, double base_lr, int decay_every, double factor)
{
  if (epoch < 0 || decay_every <= 0) {
    throw ParameterError("lr_schedule needs epoch >= 0 and decay_every > 0");
  }
  return base_lr * std::pow(factor, epoch / decay_every);
}

}  // namespace ambireg::nn
