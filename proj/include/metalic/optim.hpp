#pragma once

#include <cstdint>

#include "metalic/params.hpp"

namespace metalic {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay rate, applied to non-bias tensors only.
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)   (wd = 0 on biases)
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<T>& like, AdamConfig config) : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ParamSet<T>& params, const ParamSet<T>& grads, double lr);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps_taken() const { return t_; }
  ParamSet<T>& first_moment() { return m_; }
  ParamSet<T>& second_moment() { return v_; }
  const ParamSet<T>& first_moment() const { return m_; }
  const ParamSet<T>& second_moment() const { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  void set_config(const AdamConfig& config) { config_ = config; }

 private:
  AdamConfig config_;
  ParamSet<T> m_, v_;
  std::int64_t t_ = 0;
};

/// p <- p - lr * g
template <class T>
void sgd_step(ParamSet<T>& params, const ParamSet<T>& grads, double lr);

/// Scales `grads` so its global norm is at most `max_norm` (no-op when
/// max_norm <= 0). Returns the pre-clip norm.
template <class T>
double clip_grad_norm(ParamSet<T>& grads, double max_norm);

/// Linear warmup 0 -> peak over `warmup` steps, then cosine from peak to
/// peak * min_fraction at `total`. Throws OutOfRange outside [0, total].
double lr_schedule(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak, double min_fraction);

}  // namespace metalic
