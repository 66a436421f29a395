#include "metalic/train.hpp"

#include <algorithm>
#include <cmath>

#include "metalic/config.hpp"
#include "metalic/log.hpp"

namespace metalic {

void validate(const TrainConfig& c) {
  if (c.total_steps < 0) throw InvalidConfig("total_steps must be >= 0");
  if (c.warmup_steps < 0 || (c.total_steps > 0 && c.warmup_steps >= c.total_steps)) {
    throw InvalidConfig("warmup_steps must be in [0, total_steps)");
  }
  if (c.peak_lr < 0 || c.min_lr_fraction < 0 || c.weight_decay < 0 || c.grad_clip_norm < 0) {
    throw InvalidConfig("learning rates, decay and clip norm must be >= 0");
  }
  if (c.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (c.n_query < 2) throw InvalidConfig("n_query must be >= 2");
  if (c.support_sizes.empty()) throw InvalidConfig("support_sizes must not be empty");
  for (int s : c.support_sizes) {
    if (s < 0) throw InvalidConfig("support sizes must be >= 0");
  }
}

TrainState start_training(const AxialRegressor& model, const TrainConfig& config) {
  validate(config);
  Rng init_rng(derive_seed(config.seed, "init"));
  TrainState state;
  state.params = model.init(init_rng);
  state.optimizer = Adam<float>(state.params, config.adam());
  state.rng.seed(derive_seed(config.seed, "train"));
  return state;
}

TaskSampler::TaskSampler(std::span<const FitnessTask> tasks, const std::string& task_mix) : tasks_(tasks) {
  if (tasks.empty()) throw InsufficientData("no training tasks");
  if (trim(task_mix).empty()) {
    groups_.emplace_back();
    for (std::size_t i = 0; i < tasks.size(); ++i) groups_.back().push_back(i);
    weights_.push_back(1.0);
    return;
  }
  for (const auto& item : split(task_mix, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidConfig("task_mix entry '" + item + "' is not family:weight");
    const FamilyTag tag = family_from_string(trim(item.substr(0, colon)));
    double w = 0.0;
    try {
      w = std::stod(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw InvalidConfig("task_mix entry '" + item + "' has a bad weight");
    }
    if (w < 0) throw InvalidConfig("task_mix weights must be >= 0");
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].family == tag) group.push_back(i);
    }
    if (w > 0 && group.empty()) {
      throw InsufficientData("task_mix requests family '" + std::string(to_string(tag)) + "' but no task has it");
    }
    groups_.push_back(std::move(group));
    weights_.push_back(w);
  }
  double total = 0.0;
  for (double w : weights_) total += w;
  if (total <= 0) throw InvalidConfig("task_mix weights sum to zero");
}

const FitnessTask& TaskSampler::next(Rng& rng) const {
  std::size_t g = 0;
  if (groups_.size() > 1) {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    g = pick(rng);
  }
  const auto& group = groups_[g];
  std::uniform_int_distribution<std::size_t> pick(0, group.size() - 1);
  return tasks_[group[pick(rng)]];
}

ContextBatch sample_training_context(const FitnessTask& task, const TrainConfig& config, Rng& rng) {
  SamplingOptions options;
  options.exclude_wild_type = config.exclude_wild_type;
  const std::size_t pool = sampling_pool(task, options).size();
  if (pool < 2) throw InsufficientData("task '" + task.name + "' has fewer than 2 sampleable records");
  std::uniform_int_distribution<std::size_t> pick(0, config.support_sizes.size() - 1);
  const auto wanted = static_cast<std::size_t>(config.support_sizes[pick(rng)]);
  const std::size_t n_query = std::min(static_cast<std::size_t>(config.n_query), pool);
  const std::size_t n_support = std::min(wanted, pool - n_query);
  return sample_context(task, n_support, n_query, rng, options);
}

std::vector<StepRecord> meta_train(const AxialRegressor& model, std::span<const FitnessTask> tasks,
                                   const TrainConfig& config, const LossConfig& loss, TrainState& state,
                                   const CheckpointSink& sink, std::int64_t until_step) {
  validate(config);
  if (until_step < 0) until_step = config.total_steps;
  until_step = std::min(until_step, config.total_steps);
  const TaskSampler sampler(tasks, config.task_mix);
  std::vector<StepRecord> history;
  auto grads = state.params.zeros_like();
  std::vector<ContextBatch> batch(static_cast<std::size_t>(config.batch_size));
  while (state.step < until_step) {
    for (auto& c : batch) c = sample_training_context(sampler.next(state.rng), config, state.rng);
    grads.set_zero();
    StepRecord rec;
    rec.step = state.step + 1;
    try {
      rec.loss = meta_objective<float>(model, state.params, batch, loss, &state.rng, &grads);
    } catch (const NonFiniteActivation& e) {
      if (sink) sink(state, "diagnostic");
      throw NonFiniteLoss(std::string("training diverged at step ") + std::to_string(rec.step) + ": " + e.what());
    } catch (const NonFiniteLoss&) {
      if (sink) sink(state, "diagnostic");
      throw;
    }
    rec.grad_norm = clip_grad_norm(grads, config.grad_clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      if (sink) sink(state, "diagnostic");
      throw NonFiniteLoss("non-finite gradient norm at step " + std::to_string(rec.step));
    }
    rec.lr = lr_schedule(rec.step, config.total_steps, config.warmup_steps, config.peak_lr, config.min_lr_fraction);
    state.optimizer.step(state.params, grads, rec.lr);
    state.step = rec.step;
    ++state.gradient_computations;
    history.push_back(rec);
    if (config.log_every > 0 && state.step % config.log_every == 0) {
      log::info("step ", state.step, " loss ", rec.loss, " grad_norm ", rec.grad_norm, " lr ", rec.lr);
    }
    if (sink && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
        state.step != config.total_steps) {
      sink(state, "periodic");
    }
  }
  if (sink && state.step == config.total_steps) sink(state, "final");
  return history;
}

double monitoring_loss(const AxialRegressor& model, const ParamSet<float>& params,
                       std::span<const ContextBatch> contexts, const LossConfig& loss) {
  return meta_objective<float>(model, params, contexts, loss, nullptr, nullptr);
}

}  // namespace metalic
