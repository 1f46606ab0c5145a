#pragma once

// Decoupled-weight-decay Adam, the warmup + exponential-decay schedule, and
// global-norm gradient clipping.

#include <cmath>
#include <vector>

#include "genae/layers.hpp"

namespace genae {

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 1024;
  double decay = 0.999999;
  double clip_norm = 10.0;

  void validate() const {
    if (!(lr > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1) || !(eps > 0) || !(weight_decay >= 0) ||
        !(decay > 0 && decay <= 1) || !(clip_norm > 0))
      throw ConfigError("optimizer: hyperparameters out of range");
  }
};

// Linear warmup 0 -> lr over warmup_steps, then lr * decay^(step - warmup).
inline double lr_schedule(std::size_t step, const OptimConfig& c) {
  if (c.warmup_steps > 0 && step < c.warmup_steps)
    return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  return c.lr * std::pow(c.decay, static_cast<double>(step - c.warmup_steps));
}

template <class T>
double global_grad_norm(const ParamList<T>& ps) {
  double s = 0;
  for (const auto& p : ps)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

// Rescales all gradients so their global norm is at most max_norm. Returns
// the norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& ps, double max_norm) {
  const double n = global_grad_norm(ps);
  if (std::isfinite(n) && n > max_norm) {
    const T f = static_cast<T>(max_norm / n);
    for (auto p : ps)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.grad_values()) g *= f;
  }
  return n;
}

template <class T>
void zero_grads(const ParamList<T>& ps) {
  for (auto p : ps) p.tensor.zero_grad();
}

template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList<T> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  const OptimConfig& config() const { return cfg_; }
  const ParamList<T>& params() const { return params_; }
  std::size_t steps() const { return t_; }

  // One update at learning rate lr. Parameters without a gradient are
  // treated as having a zero gradient.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T shrink = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto t = params_[i].tensor;
      auto& w = t.values();
      const bool has = t.has_grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = has ? static_cast<double>(t.grad()[j]) : 0.0;
        m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g * g;
        w[j] *= shrink;
        if (m[j] != 0.0) w[j] -= static_cast<T>(lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps));
      }
    }
  }

 private:
  ParamList<T> params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace genae
