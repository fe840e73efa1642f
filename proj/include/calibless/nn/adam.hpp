#pragma once

#include "layers.hpp"

namespace calibless::nn {

struct AdamConfig
{
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound to the parameter list order.
class Adam
{
public:
  Adam(std::vector<Param *> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg)
  {
    for (auto *p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step()
  {
    ++t_;
    double const c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto &p = *params_[k];
      auto &m = m_[k];
      auto &v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        double const g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  int steps() const { return t_; }

private:
  std::vector<Param *> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

} // namespace calibless::nn
