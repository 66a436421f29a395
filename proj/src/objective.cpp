#include "metalic/objective.hpp"

#include <cmath>

namespace metalic {

std::string_view to_string(LossKind kind) { return kind == LossKind::preference ? "preference" : "mse"; }

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "preference") return LossKind::preference;
  if (name == "mse") return LossKind::mse;
  throw InvalidConfig("unknown loss kind '" + std::string(name) + "'");
}

double pairwise_prob(double v_i, double v_j) {
  const double x = v_i - v_j;
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw LengthMismatch("scores and labels differ in length (" + std::to_string(a) + " vs " +
                                   std::to_string(b) + ")");
}

}  // namespace

double preference_loss(std::span<const double> v, std::span<const double> y) {
  check_lengths(v.size(), y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (y[i] > y[j]) total += softplus(v[j] - v[i]);
    }
  }
  return total;
}

std::size_t strict_pair_count(std::span<const double> y) {
  std::size_t n = 0;
  for (double a : y) {
    for (double b : y) n += a > b ? 1 : 0;
  }
  return n;
}

double mse_loss(std::span<const double> v, std::span<const double> y) {
  check_lengths(v.size(), y.size());
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += (v[i] - y[i]) * (v[i] - y[i]);
  return total / static_cast<double>(v.size());
}

template <class T>
double loss_with_grad(const LossConfig& config, std::span<const T> v, std::span<const double> y, std::vector<T>* dv) {
  check_lengths(v.size(), y.size());
  const std::size_t n = v.size();
  std::vector<double> g(n, 0.0);
  double loss = 0.0;
  if (config.kind == LossKind::mse) {
    if (n > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double r = static_cast<double>(v[i]) - y[i];
        loss += r * r;
        g[i] = 2.0 * r / static_cast<double>(n);
      }
      loss /= static_cast<double>(n);
    }
  } else {
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!(y[i] > y[j])) continue;
        const double margin = static_cast<double>(v[i]) - static_cast<double>(v[j]);
        loss += softplus(-margin);
        // d softplus(-m) / dm = -sigmoid(-m)
        const double s = 1.0 - pairwise_prob(static_cast<double>(v[i]), static_cast<double>(v[j]));
        g[i] -= s;
        g[j] += s;
        ++pairs;
      }
    }
    if (config.normalize_by_pairs && pairs > 0) {
      loss /= static_cast<double>(pairs);
      for (auto& x : g) x /= static_cast<double>(pairs);
    }
  }
  if (dv != nullptr) {
    dv->resize(n);
    for (std::size_t i = 0; i < n; ++i) (*dv)[i] = static_cast<T>(g[i]);
  }
  return loss;
}

template <class T>
double context_loss(const AxialRegressor& model, const ParamSet<T>& params, const ContextBatch& context,
                    const LossConfig& config, Rng* dropout_rng, ParamSet<T>* grads, double weight) {
  const auto grid = model.assemble(context, params);
  ForwardOptions options;
  options.dropout_rng = dropout_rng;
  const auto pass = model.forward(params, grid, options);
  std::vector<T> dv;
  const double loss = loss_with_grad<T>(config, pass.scores, context.query_labels, grads ? &dv : nullptr);
  if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite context loss");
  if (grads != nullptr) {
    for (auto& x : dv) x = static_cast<T>(static_cast<double>(x) * weight);
    model.backward(params, grid, pass, std::span<const T>(dv), *grads);
  }
  return loss;
}

template <class T>
double meta_objective(const AxialRegressor& model, const ParamSet<T>& params, std::span<const ContextBatch> contexts,
                      const LossConfig& config, Rng* dropout_rng, ParamSet<T>* grads) {
  if (contexts.empty()) throw InsufficientData("meta_objective needs at least one context");
  const double w = 1.0 / static_cast<double>(contexts.size());
  double total = 0.0;
  for (const auto& c : contexts) total += context_loss(model, params, c, config, dropout_rng, grads, w);
  return total * w;
}

template double loss_with_grad<float>(const LossConfig&, std::span<const float>, std::span<const double>,
                                      std::vector<float>*);
template double loss_with_grad<double>(const LossConfig&, std::span<const double>, std::span<const double>,
                                       std::vector<double>*);
template double context_loss<float>(const AxialRegressor&, const ParamSet<float>&, const ContextBatch&,
                                    const LossConfig&, Rng*, ParamSet<float>*, double);
template double context_loss<double>(const AxialRegressor&, const ParamSet<double>&, const ContextBatch&,
                                     const LossConfig&, Rng*, ParamSet<double>*, double);
template double meta_objective<float>(const AxialRegressor&, const ParamSet<float>&, std::span<const ContextBatch>,
                                      const LossConfig&, Rng*, ParamSet<float>*);
template double meta_objective<double>(const AxialRegressor&, const ParamSet<double>&, std::span<const ContextBatch>,
                                       const LossConfig&, Rng*, ParamSet<double>*);

}  // namespace metalic
