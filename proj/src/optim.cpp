#include "metalic/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace metalic {

template <class T>
void Adam<T>::step(ParamSet<T>& params, const ParamSet<T>& grads, double lr) {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto& layout = params.layout();
  for (TensorId id = 0; id < layout.tensors().size(); ++id) {
    const double wd = layout.spec(id).is_bias ? 0.0 : config_.weight_decay;
    auto p = params.tensor(id);
    const auto g = grads.tensor(id);
    auto m = m_.tensor(id);
    auto v = v_.tensor(id);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double pi = static_cast<double>(p[i]);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + config_.eps) + wd * pi;
      p[i] = static_cast<T>(pi - lr * update);
    }
  }
}

template <class T>
void sgd_step(ParamSet<T>& params, const ParamSet<T>& grads, double lr) {
  auto p = params.flat();
  const auto g = grads.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * static_cast<double>(g[i]));
  }
}

template <class T>
double clip_grad_norm(ParamSet<T>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads.flat()) g = static_cast<T>(static_cast<double>(g) * scale);
  }
  return norm;
}

double lr_schedule(std::int64_t step, std::int64_t total, std::int64_t warmup, double peak, double min_fraction) {
  if (total <= 0 || warmup < 0 || warmup >= total) throw InvalidConfig("schedule needs 0 <= warmup < total");
  if (step < 0 || step > total) {
    throw OutOfRange("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (min_fraction + (1.0 - min_fraction) * cosine);
}

template class Adam<float>;
template class Adam<double>;
template void sgd_step<float>(ParamSet<float>&, const ParamSet<float>&, double);
template void sgd_step<double>(ParamSet<double>&, const ParamSet<double>&, double);
template double clip_grad_norm<float>(ParamSet<float>&, double);
template double clip_grad_norm<double>(ParamSet<double>&, double);

}  // namespace metalic
