#pragma once

#include <cmath>

#include "scorediff/nn/params.hpp"

namespace scorediff::nn {

/// Decoupled weight decay Adam. Defaults follow the fine-tuning recipe:
/// lr 1e-4, betas (0.9, 0.999), weight decay 0.01.
struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  /// Global L2 norm over the gradients of trainable parameters.
  static double grad_norm(const ParamStore<T>& store) {
    double acc = 0;
    store.for_each([&](const Param<T>& p) {
      if (!p.trainable) return;
      for (T g : p.grad.values()) acc += double(g) * double(g);
    });
    return std::sqrt(acc);
  }

  /// Applies one update to every trainable parameter and returns the
  /// gradient norm before clipping.
  double step(ParamStore<T>& store) {
    ++step_;
    const double norm = grad_norm(store);
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    store.for_each([&](Param<T>& p) {
      if (!p.trainable) return;
      if (p.m.shape() != p.value.shape()) p.m = Tensor<T>(p.value.shape());
      if (p.v.shape() != p.value.shape()) p.v = Tensor<T>(p.value.shape());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = double(p.grad[i]) * clip;
        const double m = cfg_.beta1 * double(p.m[i]) + (1 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * double(p.v[i]) + (1 - cfg_.beta2) * g * g;
        p.m[i] = T(m);
        p.v[i] = T(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps) + cfg_.weight_decay * double(p.value[i]);
        p.value[i] = T(double(p.value[i]) - cfg_.lr * update);
      }
    });
    return norm;
  }

 private:
  AdamWConfig cfg_;
  std::size_t step_ = 0;
};

}  // namespace scorediff::nn
