#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metalic/core.hpp"

namespace metalic {

enum class LandscapeKind { additive, nk, epistatic };

std::string_view to_string(LandscapeKind kind);
LandscapeKind landscape_kind_from_string(std::string_view name);

struct LandscapeSpec {
  int n_sites = 10;
  int alphabet_size = 6;
  LandscapeKind kind = LandscapeKind::nk;
  int k_neighbors = 1;     // nk only
  int n_interactions = 0;  // epistatic only; 0 means n_sites pairs
  double interaction_scale = 0.5;
  double noise_std = 0.0;
  std::uint64_t rng_seed = 0;
};

void validate(const LandscapeSpec& spec);

/// Deterministic fitness oracle over sequences of a fixed length.
///
/// additive:  f(s) = sum_i c[i][s_i]
/// nk:        f(s) = sum_i T_i[s_i, s_{i+1}, ..., s_{i+K}]   (cyclic neighbours)
/// epistatic: additive base plus sum over sampled pairs (i, j) of W_ij[s_i, s_j]
///
/// NK contributions are summed rather than averaged so that K = 0 reproduces the
/// additive oracle bit for bit; tasks are z-scored afterwards so scale is moot.
class Landscape {
 public:
  Landscape() = default;
  explicit Landscape(const LandscapeSpec& spec);

  /// Additive landscape from explicit per-site tables, tables[site][symbol].
  static Landscape from_additive_tables(std::vector<std::vector<double>> tables);

  const LandscapeSpec& spec() const { return spec_; }
  const Alphabet& alphabet() const { return alphabet_; }

  double operator()(std::string_view sequence) const { return evaluate(alphabet_.encode(sequence)); }
  double evaluate(const std::vector<int>& tokens) const;

  /// Per-site contribution table (additive base or NK table of site i).
  const std::vector<double>& site_table(int site) const { return tables_.at(static_cast<std::size_t>(site)); }

 private:
  struct Interaction {
    int i = 0;
    int j = 0;
    std::vector<double> weights;  // A x A, row-major
  };

  LandscapeSpec spec_;
  Alphabet alphabet_;
  int span_ = 1;                             // entries per site key = A^span_
  std::vector<std::vector<double>> tables_;  // per site
  std::vector<Interaction> interactions_;
};

/// All L x (A - 1) sequences at Hamming distance one from `wild_type`.
std::vector<std::string> enumerate_single_mutants(std::string_view wild_type, const Alphabet& alphabet);

/// Number of distinct non-wild-type sequences within `max_mutations` of a wild type.
double mutant_space_size(int n_sites, int alphabet_size, int max_mutations);

/// Mutants of a random wild type labelled by the landscape (plus Gaussian noise
/// of noise_std), z-scored. Family tag follows max_mutations.
FitnessTask make_synthetic_task(const LandscapeSpec& spec, std::size_t n_records, int max_mutations, Rng& rng,
                                std::string name = "synthetic");

/// Shared-structure task family: every task mixes one shared landscape with a
/// private per-task additive landscape and a wild-type-relative site penalty.
///
///   f_t(s) = shared(s) + private_weight * private_t(s)
///            - sensitivity_weight * sum_i sens_i * [s_i != wt_t,i] + noise
///
/// The per-site sensitivities are shared across the family; the wild type is
/// drawn per task, so the penalty can only be read off from the other
/// sequences of the same task.
struct FamilySpec {
  LandscapeSpec shared;
  double private_weight = 0.5;
  double sensitivity_weight = 1.0;
  std::size_t n_records = 400;
  int max_mutations = 2;
  double single_mutant_fraction = 0.0;  // fraction of tasks restricted to single mutants
  std::string name_prefix = "task";
};

void validate(const FamilySpec& spec);

class FamilyOracle {
 public:
  FamilyOracle(const FamilySpec& spec, std::uint64_t family_seed, std::size_t n_tasks);

  /// Noise-free fitness of `sequence` in task `task_index` with the given wild type.
  double task_fitness(std::size_t task_index, std::string_view wild_type, std::string_view sequence) const;

  const Landscape& shared() const { return shared_; }
  const std::vector<double>& sensitivities() const { return sensitivity_; }

 private:
  FamilySpec spec_;
  Landscape shared_;
  std::vector<double> sensitivity_;
  std::vector<Landscape> private_;
};

/// Distinct random mutants of `wild_type` with 1..max_mutations substitutions.
std::vector<std::string> sample_mutants(std::string_view wild_type, const Alphabet& alphabet, int max_mutations,
                                        std::size_t count, Rng& rng);

/// Generates `n_tasks` tasks from the family; fully determined by `seed`.
std::vector<FitnessTask> make_task_family(const FamilySpec& spec, std::size_t n_tasks, std::uint64_t seed);

}  // namespace metalic
