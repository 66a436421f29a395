#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metalic/adapt.hpp"
#include "metalic/config.hpp"

namespace metalic {

struct Correlation {
  double rho = 0.0;
  /// Set when either input is constant; rho is then reported as 0.
  bool degenerate = false;
};

/// Average ranks (1-based); ties share the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks. Throws LengthMismatch for unequal
/// lengths and InsufficientData for fewer than two points.
Correlation spearman(std::span<const double> a, std::span<const double> b);

/// Scores `points` with the whole support in context, `chunk` queries per
/// forward pass (0: all at once).
std::vector<double> score_points(const AxialRegressor& model, const ParamSet<float>& params,
                                 std::span<const Record> support, std::span<const Record> points, int chunk = 0);

struct EvalProtocol {
  std::vector<int> shots{0, 16, 128};
  int query_chunk = 100;
  int early_stop_size = 128;
  int max_points = 2000;
  int support_resamples = 3;
  std::vector<std::uint64_t> seeds{0};
  /// One rho per chunk, averaged, instead of one rho over concatenated chunks.
  bool per_chunk = false;
  bool exclude_wild_type = true;
  bool finetune = true;
  /// Pass the early-stop points in context instead of fine-tuning on them.
  bool merge_early_stop_into_support = false;
  /// Re-standardize support labels with support statistics only.
  bool restandardize_support = true;
};

void validate(const EvalProtocol& protocol);

/// Where each point of one evaluation went. pool = task size minus any
/// excluded wild type; pool = early_stop + shot + scored + dropped + unused.
struct PointAccounting {
  std::size_t pool = 0;
  std::size_t shot = 0;
  std::size_t early_stop = 0;
  std::size_t chunks = 0;
  std::size_t scored = 0;
  std::size_t dropped = 0;  // remainder that does not fill a chunk
  std::size_t unused = 0;   // beyond max_points
  std::size_t context_support = 0;  // support rows actually placed in context
};

/// Counts only; throws TaskTooSmall when not even one chunk fits.
PointAccounting plan_points(std::size_t pool, int shot, const EvalProtocol& protocol);

struct ResampleResult {
  int resample = 0;
  double rho = 0.0;
  bool degenerate = false;
  std::vector<double> chunk_rhos;
  std::vector<bool> chunk_degenerate;
  PointAccounting accounting;
  int best_step = -1;
  std::uint64_t gradient_computations = 0;
};

/// A model (or oracle) ready to rank query points for one resample.
struct Adapted {
  std::function<std::vector<double>(std::span<const Record> support, std::span<const Record> query)> score;
  int best_step = -1;
  std::uint64_t gradient_computations = 0;
};

/// Builds an Adapted predictor from the sampled support and early-stop sets.
using Adapter =
    std::function<Adapted(std::span<const Record> support, std::span<const Record> early_stop, Rng& rng)>;

/// The benchmark protocol for one task and shot. Per resample r the pool is
/// shuffled with derive_seed(seed, task name, r); the first early_stop_size
/// points are the early-stop set, the next `shot` the support, and the rest
/// (up to max_points) is scored in chunks of query_chunk with the full
/// support in context. The remainder of the last chunk is dropped.
std::vector<ResampleResult> run_protocol(const FitnessTask& task, int shot, const EvalProtocol& protocol,
                                         std::uint64_t seed, const Adapter& adapter);

/// Fine-tunes when shot > 0 and fine-tuning is on; zero-shot never updates.
Adapter model_adapter(const AxialRegressor& model, const ParamSet<float>& params, const FinetuneConfig& finetune,
                      const LossConfig& loss, bool finetune_enabled);

/// Scores every point by its true label.
Adapter oracle_adapter();

std::vector<ResampleResult> evaluate_task(const AxialRegressor& model, const ParamSet<float>& params,
                                          const FitnessTask& task, int shot, const EvalProtocol& protocol,
                                          const FinetuneConfig& finetune, const LossConfig& loss, std::uint64_t seed);

enum class Ablation { none, NoICL, NoFT, NoPref, NoMetaTrain, NoAug, AuxChannel };

std::string_view to_string(Ablation ablation);
/// Throws UnknownAblation.
Ablation ablation_from_string(std::string_view name);

struct MethodSettings {
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  EvalProtocol protocol;
  LossConfig loss;
  bool meta_train = true;
};

MethodSettings build_ablation(Ablation ablation, MethodSettings base);

/// Results of one seed: task -> shot -> resamples.
struct RunResult {
  std::uint64_t seed = 0;
  std::map<std::string, std::map<int, std::vector<ResampleResult>>> tasks;
};

struct ShotSummary {
  std::vector<double> per_seed;  // mean over tasks of the per-task resample mean
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  std::size_t degenerate = 0;
};

struct EvalReport {
  std::string method;
  std::string checkpoint_id;
  std::vector<std::string> ablations;
  std::uint64_t gradient_computations = 0;
  std::vector<RunResult> runs;
  std::map<int, ShotSummary> summary;
  KeyValues config;
};

/// Resamples -> task mean; tasks -> run mean; runs -> mean +- population std.
EvalReport aggregate(std::vector<RunResult> runs);

double task_mean(const std::vector<ResampleResult>& resamples);

std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

}  // namespace metalic
