#include "metalic/adapt.hpp"

#include <algorithm>
#include <numeric>

#include "metalic/eval.hpp"
#include "metalic/log.hpp"

namespace metalic {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw InvalidConfig("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OuterUpdate kind) { return kind == OuterUpdate::plain ? "plain" : "adam"; }

OuterUpdate outer_update_from_string(std::string_view name) {
  if (name == "plain") return OuterUpdate::plain;
  if (name == "adam") return OuterUpdate::adam;
  throw InvalidConfig("unknown outer update '" + std::string(name) + "'");
}

void validate(const FinetuneConfig& c) {
  if (c.steps < 0) throw InvalidConfig("finetune steps must be >= 0");
  if (c.lr < 0 || c.weight_decay < 0 || c.grad_clip_norm < 0 || c.min_lr_fraction < 0) {
    throw InvalidConfig("finetune rates must be >= 0");
  }
  if (c.subsample_query_size < 2) throw InvalidConfig("subsample_query_size must be >= 2");
  if (c.early_stop_set_size < 0) throw InvalidConfig("early_stop_set_size must be >= 0");
  if (c.early_stop_eval_every < 1) throw InvalidConfig("early_stop_eval_every must be >= 1");
  if (!c.skip_warmup && c.steps > 0 && (c.warmup_steps < 0 || c.warmup_steps >= c.steps)) {
    throw InvalidConfig("finetune warmup_steps must be in [0, steps)");
  }
}

std::pair<int, int> subsample_sizes(int n, const FinetuneConfig& config) {
  if (n <= 0) throw EmptySupport("fine-tuning needs a non-empty support; use the zero-shot path");
  int q = config.subsample_query_size;
  if (n < q) {
    if (!config.allow_fallback) {
      throw SupportTooSmall("support of " + std::to_string(n) + " is smaller than Q' = " + std::to_string(q));
    }
    q = std::max(2, n / 2);
    if (n < q) throw SupportTooSmall("support of " + std::to_string(n) + " cannot provide 2 targets");
  }
  int s = n - q;
  if (config.subsample_support_size >= 0) {
    if (config.subsample_support_size > s) {
      throw InvalidConfig("Q' + S' exceeds the support size " + std::to_string(n));
    }
    s = config.subsample_support_size;
  }
  return {q, s};
}

namespace {

/// Draws disjoint target / context index sets from [0, n).
FinetuneStep draw_split(std::size_t n, int q, int s, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  FinetuneStep step;
  step.target_ids.assign(order.begin(), order.begin() + q);
  step.context_ids.assign(order.begin() + q, order.begin() + q + s);
  return step;
}

template <class T>
double subsampled_step(const AxialRegressor& model, ParamSet<T>& params, std::span<const Record> support,
                       const FinetuneStep& split, const LossConfig& loss, Rng& rng, ParamSet<T>& grads) {
  const auto context = make_context(support, split.context_ids, split.target_ids);
  grads.set_zero();
  return context_loss<T>(model, params, context, loss, &rng, &grads);
}

double early_stop_score(const AxialRegressor& model, const ParamSet<float>& params, std::span<const Record> support,
                        std::span<const Record> early_stop) {
  const auto scores = score_points(model, params, support, early_stop);
  std::vector<double> labels;
  labels.reserve(early_stop.size());
  for (const auto& r : early_stop) labels.push_back(r.fitness);
  return spearman(scores, labels).rho;
}

}  // namespace

FinetuneResult finetune(const AxialRegressor& model, const ParamSet<float>& params, std::span<const Record> support,
                        std::span<const Record> early_stop, const FinetuneConfig& config, const LossConfig& loss,
                        Rng& rng) {
  validate(config);
  FinetuneResult result;
  result.params = params;
  if (config.steps == 0) return result;
  const auto [q, s] = subsample_sizes(static_cast<int>(support.size()), config);

  ParamSet<float> current = params;
  auto grads = current.zeros_like();
  Adam<float> adam(current, AdamConfig{0.9, 0.999, 1e-8, config.weight_decay});
  const std::int64_t warmup = config.skip_warmup ? 0 : config.warmup_steps;
  const bool early_stopping = early_stop.size() >= 2;

  auto evaluate = [&](int step) {
    if (!early_stopping) return;
    const double score = early_stop_score(model, current, support, early_stop);
    result.evaluations.emplace_back(step, score);
    if (result.evaluations.size() == 1 || score > result.best_score) {
      result.best_score = score;
      result.best_step = step;
      result.params = current;
    }
  };

  evaluate(0);
  for (int step = 0; step < config.steps; ++step) {
    FinetuneStep split = draw_split(support.size(), q, s, rng);
    split.loss = subsampled_step<float>(model, current, support, split, loss, rng, grads);
    clip_grad_norm(grads, config.grad_clip_norm);
    split.lr = lr_schedule(step + 1, config.steps, warmup, config.lr, config.min_lr_fraction);
    if (config.optimizer == OptimizerKind::adam) adam.step(current, grads, split.lr);
    else sgd_step(current, grads, split.lr);
    ++result.gradient_computations;
    result.trace.push_back(std::move(split));
    const int done = step + 1;
    if (done % config.early_stop_eval_every == 0 || done == config.steps) evaluate(done);
  }
  if (!early_stopping) {
    result.params = std::move(current);
    result.best_step = config.steps;
  }
  return result;
}

void validate(const ReptileConfig& c) {
  if (c.inner_steps < 0) throw InvalidConfig("inner_steps must be >= 0");
  if (c.inner_batch < 2) throw InvalidConfig("inner_batch must be >= 2");
  if (c.inner_lr <= 0) throw InvalidConfig("inner_lr must be > 0 (it scales the pseudo-gradient)");
  if (c.outer_lr < 0 || c.inner_clip_norm < 0 || c.weight_decay < 0) throw InvalidConfig("rates must be >= 0");
  if (c.meta_steps < 0) throw InvalidConfig("meta_steps must be >= 0");
  if (c.outer == OuterUpdate::adam && c.meta_steps > 0 && (c.warmup_steps < 0 || c.warmup_steps >= c.meta_steps)) {
    throw InvalidConfig("reptile warmup_steps must be in [0, meta_steps)");
  }
  if (c.task_batch < 1) throw InvalidConfig("task_batch must be >= 1");
  if (c.support_size < 2) throw InvalidConfig("reptile support_size must be >= 2");
}

template <class T>
ParamSet<T> reptile_inner(const AxialRegressor& model, const ParamSet<T>& params, std::span<const Record> support,
                          const ReptileConfig& config, const LossConfig& loss, Rng& rng) {
  ParamSet<T> adapted = params;
  if (config.inner_steps == 0) return adapted;
  FinetuneConfig sizes;
  sizes.subsample_query_size = config.inner_batch;
  const auto [q, s] = subsample_sizes(static_cast<int>(support.size()), sizes);
  auto grads = adapted.zeros_like();
  Adam<T> adam(adapted, AdamConfig{0.9, 0.999, 1e-8, 0.0});
  for (int k = 0; k < config.inner_steps; ++k) {
    const FinetuneStep split = draw_split(support.size(), q, s, rng);
    subsampled_step<T>(model, adapted, support, split, loss, rng, grads);
    clip_grad_norm(grads, config.inner_clip_norm);
    if (config.inner_optimizer == OptimizerKind::adam) adam.step(adapted, grads, config.inner_lr);
    else sgd_step(adapted, grads, config.inner_lr);
  }
  return adapted;
}

template <class T>
void reptile_outer_update(ParamSet<T>& params, std::span<const ParamSet<T>> adapted, const ReptileConfig& config,
                          Adam<T>* outer_optimizer, double lr) {
  if (adapted.empty()) throw InsufficientData("reptile outer update needs at least one adapted parameter set");
  const std::size_t n = params.size();
  std::vector<double> mean_delta(n, 0.0);  // mean(adapted - params)
  for (const auto& a : adapted) {
    const auto src = a.flat();
    const auto p = params.flat();
    for (std::size_t i = 0; i < n; ++i) mean_delta[i] += static_cast<double>(src[i]) - static_cast<double>(p[i]);
  }
  const double inv = 1.0 / static_cast<double>(adapted.size());
  for (auto& d : mean_delta) d *= inv;

  if (config.outer == OuterUpdate::plain) {
    auto p = params.flat();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<T>(static_cast<double>(p[i]) + config.outer_lr * mean_delta[i]);
    }
    return;
  }
  if (outer_optimizer == nullptr) throw InvalidConfig("adam outer update needs an optimizer");
  auto pseudo = params.zeros_like();
  auto g = pseudo.flat();
  for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<T>(-mean_delta[i] / config.inner_lr);
  outer_optimizer->step(params, pseudo, lr);
}

TrainState start_reptile(const AxialRegressor& model, const ReptileConfig& config) {
  validate(config);
  Rng init_rng(derive_seed(config.seed, "init"));
  TrainState state;
  state.params = model.init(init_rng);
  state.optimizer = Adam<float>(state.params, AdamConfig{0.9, 0.999, 1e-8, config.weight_decay});
  state.rng.seed(derive_seed(config.seed, "train"));
  return state;
}

std::vector<StepRecord> reptile_meta_train(const AxialRegressor& model, std::span<const FitnessTask> tasks,
                                           const ReptileConfig& config, const LossConfig& loss, TrainState& state,
                                           const CheckpointSink& sink, std::int64_t until_step) {
  validate(config);
  if (until_step < 0) until_step = config.meta_steps;
  until_step = std::min(until_step, config.meta_steps);
  const TaskSampler sampler(tasks, "");
  SamplingOptions options;
  options.exclude_wild_type = config.exclude_wild_type;
  std::vector<StepRecord> history;
  std::vector<ParamSet<float>> adapted(static_cast<std::size_t>(config.task_batch));
  while (state.step < until_step) {
    StepRecord rec;
    rec.step = state.step + 1;
    try {
      for (auto& a : adapted) {
        const FitnessTask& task = sampler.next(state.rng);
        auto pool = sampling_pool(task, options);
        std::shuffle(pool.begin(), pool.end(), state.rng);
        pool.resize(std::min(static_cast<std::size_t>(config.support_size), pool.size()));
        std::vector<Record> support;
        support.reserve(pool.size());
        for (auto i : pool) support.push_back(task.records[i]);
        a = reptile_inner<float>(model, state.params, support, config, loss, state.rng);
      }
    } catch (const NonFiniteActivation& e) {
      if (sink) sink(state, "diagnostic");
      throw NonFiniteLoss(std::string("reptile diverged at step ") + std::to_string(rec.step) + ": " + e.what());
    } catch (const NonFiniteLoss&) {
      if (sink) sink(state, "diagnostic");
      throw;
    }
    rec.lr = config.outer == OuterUpdate::plain
                 ? config.outer_lr
                 : lr_schedule(rec.step, config.meta_steps, config.warmup_steps, config.outer_lr, config.min_lr_fraction);
    reptile_outer_update<float>(state.params, adapted, config, &state.optimizer, rec.lr);
    if (!state.params.all_finite()) {
      if (sink) sink(state, "diagnostic");
      throw NonFiniteLoss("non-finite parameters after reptile step " + std::to_string(rec.step));
    }
    state.step = rec.step;
    state.gradient_computations += static_cast<std::uint64_t>(config.inner_steps);
    history.push_back(rec);
    if (state.step % 100 == 0) log::info("reptile step ", state.step);
  }
  if (sink && state.step == config.meta_steps) sink(state, "final");
  return history;
}

FinetuneConfig reptile_finetune_config(const ReptileConfig& config, FinetuneConfig base) {
  base.steps = config.finetune_steps;
  base.lr = config.inner_lr;
  base.optimizer = config.inner_optimizer;
  base.subsample_query_size = config.inner_batch;
  base.grad_clip_norm = config.inner_clip_norm;
  base.skip_warmup = true;
  base.min_lr_fraction = 1.0;  // constant inner learning rate
  return base;
}

template ParamSet<float> reptile_inner<float>(const AxialRegressor&, const ParamSet<float>&, std::span<const Record>,
                                              const ReptileConfig&, const LossConfig&, Rng&);
template ParamSet<double> reptile_inner<double>(const AxialRegressor&, const ParamSet<double>&,
                                                std::span<const Record>, const ReptileConfig&, const LossConfig&,
                                                Rng&);
template void reptile_outer_update<float>(ParamSet<float>&, std::span<const ParamSet<float>>, const ReptileConfig&,
                                          Adam<float>*, double);
template void reptile_outer_update<double>(ParamSet<double>&, std::span<const ParamSet<double>>,
                                           const ReptileConfig&, Adam<double>*, double);

}  // namespace metalic
