#include "metalic/landscapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace metalic {

std::string_view to_string(LandscapeKind kind) {
  switch (kind) {
    case LandscapeKind::additive: return "additive";
    case LandscapeKind::nk: return "nk";
    case LandscapeKind::epistatic: return "epistatic";
  }
  return "nk";
}

LandscapeKind landscape_kind_from_string(std::string_view name) {
  if (name == "additive") return LandscapeKind::additive;
  if (name == "nk") return LandscapeKind::nk;
  if (name == "epistatic") return LandscapeKind::epistatic;
  throw InvalidSpec("unknown landscape kind '" + std::string(name) + "'");
}

void validate(const LandscapeSpec& spec) {
  if (spec.n_sites < 1) throw InvalidSpec("n_sites must be positive");
  if (spec.alphabet_size < 2) throw InvalidSpec("alphabet_size must be >= 2");
  if (spec.k_neighbors < 0 || spec.k_neighbors >= spec.n_sites) throw InvalidSpec("k_neighbors must be in [0, n_sites)");
  if (!(spec.noise_std >= 0.0)) throw InvalidSpec("noise_std must be >= 0");
  if (spec.n_interactions < 0) throw InvalidSpec("n_interactions must be >= 0");
  if (spec.kind == LandscapeKind::nk) {
    const double entries = std::pow(static_cast<double>(spec.alphabet_size), spec.k_neighbors + 1);
    if (entries > 1e7) throw InvalidSpec("NK table too large: A^(K+1) > 1e7");
  }
  (void)Alphabet::synthetic(spec.alphabet_size);
}

Landscape::Landscape(const LandscapeSpec& spec) : spec_(spec) {
  validate(spec);
  alphabet_ = Alphabet::synthetic(spec.alphabet_size);
  span_ = spec.kind == LandscapeKind::nk ? spec.k_neighbors + 1 : 1;
  std::size_t entries = 1;
  for (int m = 0; m < span_; ++m) entries *= static_cast<std::size_t>(spec.alphabet_size);

  Rng rng(spec.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  tables_.assign(static_cast<std::size_t>(spec.n_sites), std::vector<double>(entries));
  for (auto& table : tables_) {
    for (auto& v : table) v = unit(rng);
  }

  if (spec.kind == LandscapeKind::epistatic && spec.n_sites >= 2) {
    const int pairs = spec.n_interactions > 0 ? spec.n_interactions : spec.n_sites;
    std::uniform_int_distribution<int> site(0, spec.n_sites - 1);
    std::normal_distribution<double> weight(0.0, spec.interaction_scale);
    const auto a = static_cast<std::size_t>(spec.alphabet_size);
    for (int p = 0; p < pairs; ++p) {
      Interaction term;
      term.i = site(rng);
      do {
        term.j = site(rng);
      } while (term.j == term.i);
      term.weights.resize(a * a);
      for (auto& w : term.weights) w = weight(rng);
      interactions_.push_back(std::move(term));
    }
  }
}

Landscape Landscape::from_additive_tables(std::vector<std::vector<double>> tables) {
  if (tables.empty()) throw InvalidSpec("additive landscape needs at least one site");
  Landscape out;
  out.spec_.n_sites = static_cast<int>(tables.size());
  out.spec_.alphabet_size = static_cast<int>(tables.front().size());
  out.spec_.kind = LandscapeKind::additive;
  out.spec_.k_neighbors = 0;
  for (const auto& t : tables) {
    if (static_cast<int>(t.size()) != out.spec_.alphabet_size) throw InvalidSpec("ragged additive tables");
  }
  out.alphabet_ = Alphabet::synthetic(out.spec_.alphabet_size);
  out.span_ = 1;
  out.tables_ = std::move(tables);
  return out;
}

double Landscape::evaluate(const std::vector<int>& tokens) const {
  const int n = spec_.n_sites;
  if (static_cast<int>(tokens.size()) != n) {
    throw InvalidSpec("sequence length " + std::to_string(tokens.size()) + " != n_sites " + std::to_string(n));
  }
  const int a = spec_.alphabet_size;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    std::size_t key = 0;
    std::size_t stride = 1;
    for (int m = 0; m < span_; ++m) {
      key += static_cast<std::size_t>(tokens[static_cast<std::size_t>((i + m) % n)]) * stride;
      stride *= static_cast<std::size_t>(a);
    }
    total += tables_[static_cast<std::size_t>(i)][key];
  }
  for (const auto& term : interactions_) {
    const auto si = static_cast<std::size_t>(tokens[static_cast<std::size_t>(term.i)]);
    const auto sj = static_cast<std::size_t>(tokens[static_cast<std::size_t>(term.j)]);
    total += term.weights[si * static_cast<std::size_t>(a) + sj];
  }
  return total;
}

std::vector<std::string> enumerate_single_mutants(std::string_view wild_type, const Alphabet& alphabet) {
  std::vector<std::string> out;
  out.reserve(wild_type.size() * static_cast<std::size_t>(alphabet.size() - 1));
  for (std::size_t i = 0; i < wild_type.size(); ++i) {
    for (char c : alphabet.symbols()) {
      if (c == wild_type[i]) continue;
      std::string m(wild_type);
      m[i] = c;
      out.push_back(std::move(m));
    }
  }
  return out;
}

double mutant_space_size(int n_sites, int alphabet_size, int max_mutations) {
  double total = 0.0;
  double choose = 1.0;
  for (int m = 1; m <= std::min(max_mutations, n_sites); ++m) {
    choose = choose * (n_sites - m + 1) / m;
    total += choose * std::pow(alphabet_size - 1.0, m);
  }
  return total;
}

namespace {

void enumerate_recursive(std::string& current, std::string_view wild_type, const Alphabet& alphabet, std::size_t start,
                         int remaining, std::vector<std::string>& out) {
  for (std::size_t i = start; i < wild_type.size(); ++i) {
    for (char c : alphabet.symbols()) {
      if (c == wild_type[i]) continue;
      current[i] = c;
      out.push_back(current);
      if (remaining > 1) enumerate_recursive(current, wild_type, alphabet, i + 1, remaining - 1, out);
    }
    current[i] = wild_type[i];
  }
}

}  // namespace

std::vector<std::string> sample_mutants(std::string_view wild_type, const Alphabet& alphabet, int max_mutations,
                                        std::size_t count, Rng& rng) {
  if (wild_type.empty()) throw InvalidSpec("wild type must be nonempty");
  if (max_mutations < 1) throw InvalidSpec("max_mutations must be >= 1");
  const int n = static_cast<int>(wild_type.size());
  const double capacity = mutant_space_size(n, alphabet.size(), max_mutations);
  if (static_cast<double>(count) > capacity) {
    throw InsufficientSpace("requested " + std::to_string(count) + " mutants but only " +
                            std::to_string(static_cast<long long>(capacity)) + " exist");
  }

  if (capacity <= 4.0 * static_cast<double>(count) && capacity <= 2e6) {
    std::vector<std::string> all;
    all.reserve(static_cast<std::size_t>(capacity));
    std::string current(wild_type);
    enumerate_recursive(current, wild_type, alphabet, 0, max_mutations, all);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    return all;
  }

  std::uniform_int_distribution<int> n_mut(1, std::min(max_mutations, n));
  std::uniform_int_distribution<int> other(1, alphabet.size() - 1);
  std::unordered_set<std::string> seen;
  std::vector<std::string> out;
  out.reserve(count);
  std::vector<int> sites(static_cast<std::size_t>(n));
  while (out.size() < count) {
    const int m = n_mut(rng);
    for (int i = 0; i < n; ++i) sites[static_cast<std::size_t>(i)] = i;
    for (int k = 0; k < m; ++k) {  // partial Fisher-Yates
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(sites[static_cast<std::size_t>(k)], sites[static_cast<std::size_t>(pick(rng))]);
    }
    std::string s(wild_type);
    for (int k = 0; k < m; ++k) {
      const auto i = static_cast<std::size_t>(sites[static_cast<std::size_t>(k)]);
      const int wt = alphabet.index(wild_type[i]);
      s[i] = alphabet.symbol((wt + other(rng)) % alphabet.size());
    }
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::string mutant_code(std::string_view wild_type, std::string_view sequence) {
  std::string code;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (sequence[i] == wild_type[i]) continue;
    if (!code.empty()) code += ':';
    code += wild_type[i];
    code += std::to_string(i + 1);
    code += sequence[i];
  }
  return code;
}

std::string random_sequence(const Alphabet& alphabet, int n_sites, Rng& rng) {
  std::uniform_int_distribution<int> symbol(0, alphabet.size() - 1);
  std::string s(static_cast<std::size_t>(n_sites), ' ');
  for (auto& c : s) c = alphabet.symbol(symbol(rng));
  return s;
}

}  // namespace

FitnessTask make_synthetic_task(const LandscapeSpec& spec, std::size_t n_records, int max_mutations, Rng& rng,
                                std::string name) {
  const Landscape landscape(spec);
  FitnessTask task;
  task.name = std::move(name);
  task.alphabet = landscape.alphabet();
  task.wild_type = random_sequence(task.alphabet, spec.n_sites, rng);
  task.family = max_mutations == 1 ? FamilyTag::single_mutant : FamilyTag::multi_mutant;
  auto mutants = sample_mutants(*task.wild_type, task.alphabet, max_mutations, n_records, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  task.records.reserve(mutants.size());
  for (auto& s : mutants) {
    double y = landscape(s);
    if (spec.noise_std > 0.0) y += spec.noise_std * noise(rng);
    auto code = mutant_code(*task.wild_type, s);
    task.records.push_back({std::move(s), y, std::nullopt, std::move(code)});
  }
  return standardize_task(task);
}

void validate(const FamilySpec& spec) {
  validate(spec.shared);
  if (spec.max_mutations < 1) throw InvalidSpec("max_mutations must be >= 1");
  if (spec.n_records < 2) throw InvalidSpec("n_records must be >= 2");
  if (spec.single_mutant_fraction < 0.0 || spec.single_mutant_fraction > 1.0) {
    throw InvalidSpec("single_mutant_fraction must be in [0, 1]");
  }
  if (!(spec.private_weight >= 0.0) || !(spec.sensitivity_weight >= 0.0)) throw InvalidSpec("weights must be >= 0");
}

FamilyOracle::FamilyOracle(const FamilySpec& spec, std::uint64_t family_seed, std::size_t n_tasks) : spec_(spec) {
  validate(spec);
  LandscapeSpec shared = spec.shared;
  shared.rng_seed = derive_seed(family_seed, "shared");
  shared_ = Landscape(shared);

  Rng rng(derive_seed(family_seed, "sensitivity"));
  std::exponential_distribution<double> exp1(1.0);
  sensitivity_.resize(static_cast<std::size_t>(spec.shared.n_sites));
  for (auto& s : sensitivity_) s = exp1(rng);

  private_.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    LandscapeSpec own = spec.shared;
    own.kind = LandscapeKind::additive;
    own.k_neighbors = 0;
    own.rng_seed = derive_seed(family_seed, "private", t);
    private_.emplace_back(own);
  }
}

double FamilyOracle::task_fitness(std::size_t task_index, std::string_view wild_type, std::string_view sequence) const {
  const auto tokens = shared_.alphabet().encode(sequence);
  double y = shared_.evaluate(tokens);
  if (spec_.private_weight > 0.0) y += spec_.private_weight * private_.at(task_index).evaluate(tokens);
  double penalty = 0.0;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    if (sequence[i] != wild_type[i]) penalty += sensitivity_[i];
  }
  return y - spec_.sensitivity_weight * penalty;
}

std::vector<FitnessTask> make_task_family(const FamilySpec& spec, std::size_t n_tasks, std::uint64_t seed) {
  const FamilyOracle oracle(spec, seed, n_tasks);
  const Alphabet alphabet = oracle.shared().alphabet();
  const int n_sites = spec.shared.n_sites;
  const double single_capacity = mutant_space_size(n_sites, alphabet.size(), 1);

  std::vector<FitnessTask> tasks;
  tasks.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Rng rng(derive_seed(seed, "task", t));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool single = unit(rng) < spec.single_mutant_fraction;
    const int max_mut = single ? 1 : spec.max_mutations;
    std::size_t n_records = spec.n_records;
    if (single) n_records = std::min(n_records, static_cast<std::size_t>(single_capacity));

    FitnessTask task;
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%03zu", t);
    task.name = spec.name_prefix + buf;
    task.alphabet = alphabet;
    task.wild_type = random_sequence(alphabet, n_sites, rng);
    task.family = max_mut == 1 ? FamilyTag::single_mutant : FamilyTag::multi_mutant;
    auto mutants = sample_mutants(*task.wild_type, alphabet, max_mut, n_records, rng);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& s : mutants) {
      double y = oracle.task_fitness(t, *task.wild_type, s);
      if (spec.shared.noise_std > 0.0) y += spec.shared.noise_std * noise(rng);
      auto code = mutant_code(*task.wild_type, s);
      task.records.push_back({std::move(s), y, std::nullopt, std::move(code)});
    }
    tasks.push_back(standardize_task(task));
  }
  return tasks;
}

}  // namespace metalic
