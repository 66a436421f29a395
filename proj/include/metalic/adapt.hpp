#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "metalic/objective.hpp"
#include "metalic/optim.hpp"
#include "metalic/train.hpp"

namespace metalic {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct FinetuneConfig {
  int steps = 100;
  double lr = 6e-5;
  bool skip_warmup = true;
  /// Only used when skip_warmup is false.
  int warmup_steps = 10;
  double min_lr_fraction = 1e-5;
  OptimizerKind optimizer = OptimizerKind::adam;
  double weight_decay = 5e-3;
  double grad_clip_norm = 1.0;
  /// Targets per step (Q'). Supports smaller than this fall back to
  /// max(2, floor(N / 2)) when allow_fallback is set.
  int subsample_query_size = 50;
  /// In-context labeled rows per step (S'); negative means the rest of the support.
  int subsample_support_size = -1;
  bool allow_fallback = true;
  int early_stop_set_size = 128;
  int early_stop_eval_every = 10;
  std::uint64_t seed = 0;
};

void validate(const FinetuneConfig& config);

/// (Q', S') for a support of `n_support` rows. Throws EmptySupport for 0 rows
/// and SupportTooSmall when no valid split exists.
std::pair<int, int> subsample_sizes(int n_support, const FinetuneConfig& config);

/// Indices into the support used by one fine-tuning step.
struct FinetuneStep {
  std::vector<std::size_t> target_ids;   // scored by the loss
  std::vector<std::size_t> context_ids;  // labels shown in context
  double loss = 0.0;
  double lr = 0.0;
};

struct FinetuneResult {
  ParamSet<float> params;  // best early-stop snapshot
  int best_step = 0;
  double best_score = 0.0;
  std::vector<std::pair<int, double>> evaluations;  // (step, early-stop Spearman)
  std::vector<FinetuneStep> trace;
  std::uint64_t gradient_computations = 0;
};

/// Test-time fine-tuning. Each step draws disjoint target and context subsets
/// from the support and takes one optimizer step on the loss over the targets.
/// Every early_stop_eval_every steps (and at step 0 and the last step) the
/// early-stop set is scored with the full support in context; the snapshot
/// with the highest Spearman wins, ties going to the earliest. With an empty
/// early-stop set the final parameters are returned.
FinetuneResult finetune(const AxialRegressor& model, const ParamSet<float>& params, std::span<const Record> support,
                        std::span<const Record> early_stop, const FinetuneConfig& config, const LossConfig& loss,
                        Rng& rng);

enum class OuterUpdate { plain, adam };

std::string_view to_string(OuterUpdate kind);
OuterUpdate outer_update_from_string(std::string_view name);

struct ReptileConfig {
  int inner_steps = 3;
  int inner_batch = 50;  // targets per inner step
  double inner_lr = 6e-5;
  OptimizerKind inner_optimizer = OptimizerKind::adam;
  double inner_clip_norm = 1.0;  // 0 disables clipping
  OuterUpdate outer = OuterUpdate::adam;
  /// beta for the plain update, peak learning rate for the Adam update.
  double outer_lr = 6e-5;
  std::int64_t meta_steps = 15000;
  std::int64_t warmup_steps = 1500;
  double min_lr_fraction = 1e-5;
  int task_batch = 4;
  /// Rows sampled from a task to act as its support during meta-training.
  int support_size = 128;
  /// Metalic-Reptile keeps column attention; plain Reptile turns it off.
  bool in_context = true;
  /// Inner steps used at test time.
  int finetune_steps = 3;
  double weight_decay = 5e-3;
  bool exclude_wild_type = true;
  std::uint64_t seed = 0;
};

void validate(const ReptileConfig& config);

/// k optimizer steps from a copy of `params` on contexts sub-sampled from
/// `support`; returns the adapted parameters.
template <class T>
ParamSet<T> reptile_inner(const AxialRegressor& model, const ParamSet<T>& params, std::span<const Record> support,
                          const ReptileConfig& config, const LossConfig& loss, Rng& rng);

/// plain: params += beta * mean(adapted - params)
/// adam:  Adam step on the pseudo-gradient mean(params - adapted) / inner_lr
template <class T>
void reptile_outer_update(ParamSet<T>& params, std::span<const ParamSet<T>> adapted, const ReptileConfig& config,
                          Adam<T>* outer_optimizer, double lr);

/// Outer loop. The gradient counter advances by inner_steps per outer step:
/// the inner loops of a task batch run side by side, like the contexts of
/// one Metalic batch.
std::vector<StepRecord> reptile_meta_train(const AxialRegressor& model, std::span<const FitnessTask> tasks,
                                           const ReptileConfig& config, const LossConfig& loss, TrainState& state,
                                           const CheckpointSink& sink = {}, std::int64_t until_step = -1);

/// Fresh state for Reptile meta-training (outer Adam lives in state.optimizer).
TrainState start_reptile(const AxialRegressor& model, const ReptileConfig& config);

/// Fine-tuning settings that reproduce Reptile's test-time inner loop.
FinetuneConfig reptile_finetune_config(const ReptileConfig& config, FinetuneConfig base);

}  // namespace metalic
