#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metalic/adapt.hpp"
#include "metalic/checkpoint.hpp"
#include "metalic/config.hpp"
#include "metalic/eval.hpp"
#include "metalic/landscapes.hpp"

namespace metalic {

struct ProviderConfig {
  std::string kind = "learned_table";
  /// Symbols of the alphabet; empty means the 20 amino acids.
  std::string alphabet;
  int dim = 16;  // learned_table only
  bool freeze = false;
  /// Embedding table stem (file_backed). Relative paths resolve against
  /// $METALIC_LAB_CACHE when set.
  std::string table;
};

/// Everything one experiment needs, loaded from a flat `key = value` file.
struct ExperimentConfig {
  std::string name = "metalic";
  std::string method = "metalic";  // metalic | reptile
  std::vector<int> seeds{0};
  std::string out_dir = "runs/metalic";
  std::string tasks_dir;
  std::vector<std::string> holdouts;  // empty: read split.txt from tasks_dir
  std::vector<std::string> ablations;
  int workers = 1;
  bool resume = false;

  FamilySpec family;
  std::size_t n_train_tasks = 200;
  std::size_t n_test_tasks = 20;

  ProviderConfig provider;
  ModelConfig model = ModelConfig::desk_scale();
  TrainConfig train;
  LossConfig loss;
  FinetuneConfig finetune;
  EvalProtocol protocol;
  ReptileConfig reptile;

  /// Throws InvalidConfig for unknown keys or bad values.
  static ExperimentConfig from_key_values(const KeyValues& values);
  static ExperimentConfig load(const std::filesystem::path& path);
  KeyValues to_key_values() const;
};

/// Settings after ablations and method-specific adjustments.
struct ResolvedSettings {
  MethodSettings settings;
  ReptileConfig reptile;
  bool is_reptile = false;
};

ResolvedSettings resolve(const ExperimentConfig& config);

struct TaskSplit {
  std::vector<FitnessTask> train;
  std::vector<FitnessTask> test;
};

Alphabet experiment_alphabet(const ExperimentConfig& config);
EmbeddingProvider make_provider(const ExperimentConfig& config);

/// Synthetic family described by `config.family`; the last n_test_tasks are held out.
TaskSplit generate_split(const ExperimentConfig& config, std::uint64_t seed);
/// Tasks from `tasks_dir`; holdouts from config.holdouts or `split.txt`.
TaskSplit load_split(const ExperimentConfig& config);

/// Meta-trains one seed (or returns the untrained init for NoMetaTrain).
/// `checkpoint_root`, when non-empty, receives periodic / final checkpoints.
Checkpoint train_method(const ExperimentConfig& config, const TaskSplit& split, std::uint64_t seed,
                        const std::filesystem::path& checkpoint_root = {});

/// Rebuilds the model a checkpoint was trained with.
AxialRegressor model_for_checkpoint(const Checkpoint& checkpoint);

/// Evaluates every test task at every shot of the protocol; tasks run on
/// `workers` threads (results do not depend on the worker count).
RunResult evaluate_method(const ExperimentConfig& config, const AxialRegressor& model, const ParamSet<float>& params,
                          const std::vector<FitnessTask>& tasks, std::uint64_t seed);

// Commands behind the CLI. Each echoes its resolved config into the output
// directory before doing any work.

void prepare_out_dir(const std::filesystem::path& dir, bool force);

/// Writes task CSVs plus `split.txt`; returns the task directory.
std::filesystem::path cmd_gen_tasks(const ExperimentConfig& config, bool force);
/// Returns the final checkpoint directory of each seed.
std::vector<std::filesystem::path> cmd_meta_train(const ExperimentConfig& config, bool force);
/// Evaluates one checkpoint per seed (checkpoints[i] for seeds[i]); returns the report path.
std::filesystem::path cmd_finetune_eval(const ExperimentConfig& config,
                                        const std::vector<std::filesystem::path>& checkpoints, bool force);
/// Meta-trains and evaluates each config (or reads finished report.json
/// files) and writes a comparison table; returns the table path.
std::filesystem::path cmd_compare(const std::vector<std::filesystem::path>& inputs,
                                  const std::filesystem::path& out_dir, bool force, int workers);
/// Writes the head-averaged column attention of one context.
std::filesystem::path cmd_attn_dump(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                    const std::string& task_name, int shot, bool force);

/// `layers rows` header, then layers * rows lines of `rows` values.
void write_attention_dump(const std::filesystem::path& path, const AttentionMap& map);
/// Parses a dump back into (layers, rows, values).
AttentionMap read_attention_dump(const std::filesystem::path& path);

/// One row per method: mean +- std per shot plus the gradient counter.
std::string comparison_table(const std::vector<EvalReport>& reports);

}  // namespace metalic
