#include "metalic/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace metalic {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(base ^ h) + index);
}

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
  lookup_.fill(-1);
  if (symbols_.empty()) throw InvalidSpec("alphabet must not be empty");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    auto& slot = lookup_[static_cast<unsigned char>(symbols_[i])];
    if (slot >= 0) throw InvalidSpec(std::string("duplicate alphabet symbol '") + symbols_[i] + "'");
    slot = static_cast<std::int16_t>(i);
  }
}

Alphabet Alphabet::synthetic(int size) {
  static const std::string pool = std::string(kAminoAcids) + "BJOUXZ" + "abcdefghijklmnopqrstuvwxyz";
  if (size < 2 || size > static_cast<int>(pool.size())) {
    throw InvalidSpec("synthetic alphabet size must be in [2, " + std::to_string(pool.size()) + "]");
  }
  return Alphabet(pool.substr(0, static_cast<std::size_t>(size)));
}

int Alphabet::index(char c) const {
  const int i = lookup_[static_cast<unsigned char>(c)];
  if (i < 0) throw UnknownToken(std::string("symbol '") + c + "' not in alphabet " + symbols_);
  return i;
}

std::vector<int> Alphabet::encode(std::string_view sequence) const {
  std::vector<int> out;
  out.reserve(sequence.size());
  for (char c : sequence) out.push_back(index(c));
  return out;
}

std::string_view to_string(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::single_mutant: return "single_mutant";
    case FamilyTag::multi_mutant: return "multi_mutant";
    case FamilyTag::synthetic: return "synthetic";
  }
  return "synthetic";
}

FamilyTag family_from_string(std::string_view name) {
  if (name == "single_mutant") return FamilyTag::single_mutant;
  if (name == "multi_mutant") return FamilyTag::multi_mutant;
  if (name == "synthetic") return FamilyTag::synthetic;
  throw ParseError("unknown family tag '" + std::string(name) + "'");
}

std::size_t FitnessTask::max_length() const {
  std::size_t longest = 0;
  for (const auto& r : records) longest = std::max(longest, r.sequence.size());
  return longest;
}

std::vector<double> FitnessTask::labels() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.fitness);
  return out;
}

bool FitnessTask::has_aux() const {
  return !records.empty() && std::all_of(records.begin(), records.end(), [](const Record& r) { return r.aux_score.has_value(); });
}

void validate_task(const FitnessTask& task, int max_length) {
  std::unordered_set<std::string_view> seen;
  for (const auto& r : task.records) {
    if (r.sequence.empty() || static_cast<int>(r.sequence.size()) > max_length) {
      throw InvalidSpec("task '" + task.name + "': sequence length " + std::to_string(r.sequence.size()) +
                        " outside [1, " + std::to_string(max_length) + "]");
    }
    for (char c : r.sequence) (void)task.alphabet.index(c);
    if (!seen.insert(r.sequence).second) {
      throw DuplicateSequence("task '" + task.name + "': duplicate sequence " + r.sequence);
    }
  }
}

std::vector<double> standardize(std::span<const double> values) {
  if (values.size() < 2) throw DegenerateTask("standardization needs at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0) || !std::isfinite(sd)) throw DegenerateTask("zero-variance labels");
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back((v - mean) / sd);
  return out;
}

FitnessTask standardize_task(const FitnessTask& task) {
  if (task.records.size() < 2) throw DegenerateTask("task '" + task.name + "' has fewer than 2 records");
  const auto labels = task.labels();
  std::vector<double> z;
  try {
    z = standardize(labels);
  } catch (const DegenerateTask&) {
    throw DegenerateTask("task '" + task.name + "' has zero-variance fitness");
  }
  FitnessTask out = task;
  for (std::size_t i = 0; i < z.size(); ++i) out.records[i].fitness = z[i];
  return out;
}

std::vector<std::size_t> sampling_pool(const FitnessTask& task, const SamplingOptions& options) {
  std::vector<std::size_t> pool;
  pool.reserve(task.records.size());
  for (std::size_t i = 0; i < task.records.size(); ++i) {
    if (options.exclude_wild_type && task.wild_type && task.records[i].sequence == *task.wild_type) continue;
    pool.push_back(i);
  }
  return pool;
}

ContextBatch make_context(std::span<const Record> records, std::span<const std::size_t> support_ids,
                          std::span<const std::size_t> query_ids) {
  ContextBatch batch;
  batch.support.reserve(support_ids.size());
  for (auto i : support_ids) batch.support.push_back(records[i]);
  batch.query.reserve(query_ids.size());
  batch.query_labels.reserve(query_ids.size());
  for (auto i : query_ids) {
    batch.query.push_back({records[i].sequence, records[i].aux_score});
    batch.query_labels.push_back(records[i].fitness);
  }
  batch.support_ids.assign(support_ids.begin(), support_ids.end());
  batch.query_ids.assign(query_ids.begin(), query_ids.end());
  return batch;
}

ContextBatch sample_context(const FitnessTask& task, std::size_t n_support, std::size_t n_query, Rng& rng,
                            const SamplingOptions& options) {
  if (n_query == 0) throw InsufficientData("query set must be nonempty");
  auto pool = sampling_pool(task, options);
  if (n_support + n_query > pool.size()) {
    throw InsufficientData("task '" + task.name + "' has " + std::to_string(pool.size()) + " usable records, need " +
                           std::to_string(n_support + n_query));
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::span<const std::size_t> ids(pool);
  return make_context(task.records, ids.subspan(0, n_support), ids.subspan(n_support, n_query));
}

std::pair<std::vector<FitnessTask>, std::vector<FitnessTask>> split_registry(const std::vector<FitnessTask>& tasks,
                                                                             const SplitSpec& spec) {
  std::unordered_set<std::string> holdouts(spec.holdout_task_names.begin(), spec.holdout_task_names.end());
  for (const auto& name : holdouts) {
    const bool found = std::any_of(tasks.begin(), tasks.end(), [&](const FitnessTask& t) { return t.name == name; });
    if (!found) throw UnknownTask("holdout task '" + name + "' not in registry");
  }
  std::vector<FitnessTask> train, test;
  for (const auto& t : tasks) (holdouts.count(t.name) ? test : train).push_back(t);
  return {std::move(train), std::move(test)};
}

}  // namespace metalic
