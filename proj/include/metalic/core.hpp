#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metalic/errors.hpp"

namespace metalic {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream name and index into an independent seed.
/// Used to give every task / resample / worker its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index = 0);

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kDefaultMaxLength = 750;

/// A finite symbol set with O(1) symbol -> index lookup.
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::string symbols);

  static Alphabet amino_acids() { return Alphabet(std::string(kAminoAcids)); }
  /// First `size` amino-acid letters (size <= 20), then upper-case latin.
  static Alphabet synthetic(int size);

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbols() const { return symbols_; }
  char symbol(int index) const { return symbols_.at(static_cast<std::size_t>(index)); }
  bool contains(char c) const { return lookup_[static_cast<unsigned char>(c)] >= 0; }
  /// Throws UnknownToken for symbols outside the alphabet.
  int index(char c) const;
  std::vector<int> encode(std::string_view sequence) const;

  bool operator==(const Alphabet& other) const { return symbols_ == other.symbols_; }

 private:
  std::string symbols_;
  std::array<std::int16_t, 256> lookup_{};
};

enum class FamilyTag { single_mutant, multi_mutant, synthetic };

std::string_view to_string(FamilyTag tag);
FamilyTag family_from_string(std::string_view name);

struct Record {
  std::string sequence;
  double fitness = 0.0;
  std::optional<double> aux_score;
  std::string mutant;
};

/// An unlabeled sequence as fed to the model (query rows).
struct Example {
  std::string sequence;
  std::optional<double> aux_score;
};

struct FitnessTask {
  std::string name;
  Alphabet alphabet;
  std::optional<std::string> wild_type;
  std::vector<Record> records;
  FamilyTag family = FamilyTag::synthetic;

  std::size_t size() const { return records.size(); }
  std::size_t max_length() const;
  std::vector<double> labels() const;
  bool has_aux() const;
};

/// Checks distinct sequences, alphabet membership and 1 <= L <= max_length.
void validate_task(const FitnessTask& task, int max_length = kDefaultMaxLength);

/// One support set plus one query set. Query labels are carried for the loss
/// and the metric only; assembling the model input never reads them.
struct ContextBatch {
  std::vector<Record> support;
  std::vector<Example> query;
  std::vector<double> query_labels;
  // Positions in the originating pool, kept for auditing.
  std::vector<std::size_t> support_ids;
  std::vector<std::size_t> query_ids;

  std::size_t shot() const { return support.size(); }
  std::size_t query_size() const { return query.size(); }
  std::size_t rows() const { return support.size() + query.size(); }
};

struct SplitSpec {
  std::vector<std::string> holdout_task_names;
  std::uint64_t rng_seed = 0;
};

/// z-scores with the population standard deviation. Throws DegenerateTask for
/// fewer than two values or zero variance.
std::vector<double> standardize(std::span<const double> values);

FitnessTask standardize_task(const FitnessTask& task);

struct SamplingOptions {
  bool exclude_wild_type = true;
};

/// Draws disjoint support and query sets without replacement.
ContextBatch sample_context(const FitnessTask& task, std::size_t n_support, std::size_t n_query, Rng& rng,
                            const SamplingOptions& options = {});

/// Builds a context from explicit record indices of `records`.
ContextBatch make_context(std::span<const Record> records, std::span<const std::size_t> support_ids,
                          std::span<const std::size_t> query_ids);

/// Indices of `task.records` eligible for sampling (wild type optionally removed).
std::vector<std::size_t> sampling_pool(const FitnessTask& task, const SamplingOptions& options = {});

std::pair<std::vector<FitnessTask>, std::vector<FitnessTask>> split_registry(const std::vector<FitnessTask>& tasks,
                                                                             const SplitSpec& spec);

}  // namespace metalic
