#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metalic/model.hpp"
#include "metalic/objective.hpp"
#include "metalic/optim.hpp"

namespace metalic {

struct TrainConfig {
  std::int64_t total_steps = 50000;
  std::int64_t warmup_steps = 5000;
  double peak_lr = 6e-5;
  double min_lr_fraction = 1e-5;
  int batch_size = 4;
  double weight_decay = 5e-3;
  double grad_clip_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Support size of each training context is drawn uniformly from this list
  /// (capped by the task size). A single entry is fixed-shot training.
  std::vector<int> support_sizes{0, 16, 128};
  int n_query = 100;
  /// Comma-separated `family:weight` pairs; empty samples tasks uniformly,
  /// i.e. families in proportion to their task counts.
  std::string task_mix;
  bool exclude_wild_type = true;
  std::uint64_t seed = 0;
  /// Emit a checkpoint every this many steps (0: only at the end).
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 100;

  AdamConfig adam() const { return {adam_beta1, adam_beta2, adam_eps, weight_decay}; }
};

void validate(const TrainConfig& config);

/// Everything needed to continue training bit-exactly.
struct TrainState {
  ParamSet<float> params;
  Adam<float> optimizer;
  std::int64_t step = 0;
  Rng rng;
  /// One per optimizer step computed from a fresh gradient.
  std::uint64_t gradient_computations = 0;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based index of the completed update
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

/// Fresh parameters (seeded from `seed`) plus zeroed optimizer state.
TrainState start_training(const AxialRegressor& model, const TrainConfig& config);

/// Task picker honoring `task_mix`.
class TaskSampler {
 public:
  TaskSampler(std::span<const FitnessTask> tasks, const std::string& task_mix);
  const FitnessTask& next(Rng& rng) const;

 private:
  std::span<const FitnessTask> tasks_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<double> weights_;
};

/// One training context: support size drawn from `support_sizes`, at most
/// `n_query` queries, both capped so they fit the task.
ContextBatch sample_training_context(const FitnessTask& task, const TrainConfig& config, Rng& rng);

/// Called with a tag ("periodic", "final", "diagnostic") whenever a
/// checkpoint is due.
using CheckpointSink = std::function<void(const TrainState&, std::string_view tag)>;

/// Runs updates until `state.step == until_step` (total_steps when negative).
/// Per step: sample batch_size contexts, average their loss gradients, clip,
/// and take an Adam step at lr_schedule(step + 1).
std::vector<StepRecord> meta_train(const AxialRegressor& model, std::span<const FitnessTask> tasks,
                                   const TrainConfig& config, const LossConfig& loss, TrainState& state,
                                   const CheckpointSink& sink = {}, std::int64_t until_step = -1);

/// Dropout-free loss on fixed contexts, for monitoring.
double monitoring_loss(const AxialRegressor& model, const ParamSet<float>& params,
                       std::span<const ContextBatch> contexts, const LossConfig& loss);

}  // namespace metalic
