#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "metalic/core.hpp"
#include "metalic/model.hpp"

namespace metalic {

enum class LossKind { preference, mse };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::preference;
  /// Divide the preference sum by the number of strictly ordered pairs so the
  /// magnitude does not grow with the query size.
  bool normalize_by_pairs = true;
};

/// sigmoid(v_i - v_j): probability that i ranks above j.
double pairwise_prob(double v_i, double v_j);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// -sum over ordered pairs with y_i > y_j of log sigmoid(v_i - v_j).
/// Tied labels contribute nothing. Throws LengthMismatch.
double preference_loss(std::span<const double> v, std::span<const double> y);

/// Number of ordered pairs with y_i > y_j.
std::size_t strict_pair_count(std::span<const double> y);

double mse_loss(std::span<const double> v, std::span<const double> y);

/// Loss under `config` and its gradient with respect to the scores.
template <class T>
double loss_with_grad(const LossConfig& config, std::span<const T> v, std::span<const double> y, std::vector<T>* dv);

/// Forward + loss on the query rows of one context, accumulating
/// `weight` * d(loss)/d(params) into `grads` when given. Support labels only
/// enter the model input. `dropout_rng` null runs without dropout.
template <class T>
double context_loss(const AxialRegressor& model, const ParamSet<T>& params, const ContextBatch& context,
                    const LossConfig& config, Rng* dropout_rng, ParamSet<T>* grads, double weight = 1.0);

/// Mean of context_loss over a nonempty batch; gradients are those of the mean.
template <class T>
double meta_objective(const AxialRegressor& model, const ParamSet<T>& params, std::span<const ContextBatch> contexts,
                      const LossConfig& config, Rng* dropout_rng, ParamSet<T>* grads);

}  // namespace metalic
