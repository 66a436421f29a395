#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "metalic/core.hpp"
#include "metalic/tensor.hpp"

namespace metalic {

namespace fs = std::filesystem;

/// Reads a task CSV with header `sequence,fitness[,aux_score][,mutant]`.
/// The task is named after the file stem and its labels are standardized.
/// A record whose `mutant` field is empty is taken as the wild type.
FitnessTask load_task_csv(const fs::path& path, const Alphabet& alphabet = Alphabet::amino_acids());

/// Writes labels with round-trip precision. Columns follow what the task has.
void write_task_csv(const FitnessTask& task, const fs::path& path);

class TaskRegistry {
 public:
  void add(FitnessTask task, std::string source = {});

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const FitnessTask& at(const std::string& name) const;
  const std::vector<FitnessTask>& tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  const std::string& provenance(const std::string& name) const { return provenance_.at(name); }

  bool operator==(const TaskRegistry& other) const;

 private:
  std::vector<FitnessTask> tasks_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::string> provenance_;
};

/// Loads every `*.csv` of a directory in lexicographic order.
TaskRegistry load_registry(const fs::path& directory, const Alphabet& alphabet = Alphabet::amino_acids());

/// Drops tasks whose longest sequence exceeds `max_len`, logging each removal.
TaskRegistry filter_by_length(const TaskRegistry& registry, int max_len = kDefaultMaxLength);

/// Per-residue embedding matrices keyed by exact sequence string.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  /// Throws MissingEmbedding.
  const MatF& at(const std::string& key) const;
  /// Throws ShapeMismatch if rows != key length or cols != dim.
  void insert(const std::string& key, MatF matrix);
  const std::vector<std::string>& keys() const { return order_; }

 private:
  int dim_ = 0;
  std::unordered_map<std::string, MatF> entries_;
  std::vector<std::string> order_;
};

/// Container: `<stem>.manifest` (tab-separated key, byte offset, L, D_in) plus
/// `<stem>.bin` (row-major little-endian float32). `path` may name either file
/// or the shared stem.
EmbeddingTable load_embedding_table(const fs::path& path);
void write_embedding_table(const EmbeddingTable& table, const fs::path& path);

}  // namespace metalic
