#include <doctest.h>

#include <algorithm>
#include <set>

#include "metalic/core.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

FitnessTask task_with_labels(const std::vector<double>& labels) {
  FitnessTask t;
  t.name = "toy";
  t.alphabet = Alphabet("AB");
  const std::vector<std::string> seqs{"AA", "AB", "BA", "BB"};
  for (std::size_t i = 0; i < labels.size(); ++i) t.records.push_back({seqs[i], labels[i], std::nullopt, ""});
  return t;
}

}  // namespace

TEST_CASE("standardize_task uses the population standard deviation") {
  const auto out = standardize_task(task_with_labels({1, 2, 3}));
  const double sd = std::sqrt(2.0 / 3.0);
  CHECK(out.records[0].fitness == doctest::Approx(-1 / sd).epsilon(1e-12));
  CHECK(out.records[1].fitness == doctest::Approx(0.0));
  CHECK(out.records[2].fitness == doctest::Approx(1 / sd).epsilon(1e-12));
  CHECK(out.records[0].fitness == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(out.records[1].sequence == "AB");
}

TEST_CASE("standardize_task is idempotent") {
  const auto once = standardize_task(task_with_labels({0.3, -2, 7, 1.5}));
  const auto twice = standardize_task(once);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(std::abs(once.records[i].fitness - twice.records[i].fitness) < 1e-9);
}

TEST_CASE("standardized labels have zero mean and unit population std") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(5, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(50);
    for (auto& x : v) x = n(rng);
    const auto z = standardize(v);
    double mean = 0, var = 0;
    for (double x : z) mean += x / 50;
    for (double x : z) var += (x - mean) * (x - mean) / 50;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1) < 1e-9);
    CHECK(testing::naive_spearman(v, z) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("degenerate labels are rejected") {
  CHECK_THROWS_AS(standardize_task(task_with_labels({5, 5, 5})), DegenerateTask);
  CHECK_THROWS_AS(standardize_task(task_with_labels({5})), DegenerateTask);
}

TEST_CASE("sample_context zero-shot case") {
  const auto task = testing::random_task(10, 6, 1);
  Rng rng(0);
  const auto c = sample_context(task, 0, 5, rng);
  CHECK(c.shot() == 0);
  CHECK(c.query_size() == 5);
  CHECK(c.query_labels.size() == 5);
}

TEST_CASE("sample_context draws disjoint support and query") {
  const auto task = testing::random_task(300, 10, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto c = sample_context(task, 128, 100, rng);
    REQUIRE(c.support.size() == 128);
    REQUIRE(c.query.size() == 100);
    std::set<std::string> support;
    for (const auto& r : c.support) support.insert(r.sequence);
    CHECK(support.size() == 128);
    for (const auto& q : c.query) CHECK(support.count(q.sequence) == 0);
    for (std::size_t i = 0; i < c.query.size(); ++i) {
      CHECK(task.records[c.query_ids[i]].fitness == c.query_labels[i]);
    }
  }
}

TEST_CASE("sample_context is deterministic under a fixed seed") {
  const auto task = testing::random_task(100, 8, 3);
  Rng a(42), b(42);
  const auto x = sample_context(task, 20, 30, a);
  const auto y = sample_context(task, 20, 30, b);
  CHECK(x.support_ids == y.support_ids);
  CHECK(x.query_ids == y.query_ids);
}

TEST_CASE("sample_context rejects oversized requests") {
  const auto task = testing::random_task(10, 6, 1);
  Rng rng(0);
  CHECK_THROWS_AS(sample_context(task, 6, 5, rng), InsufficientData);
  CHECK_THROWS_AS(sample_context(task, 2, 0, rng), InsufficientData);
}

TEST_CASE("the wild type is excluded from sampling unless asked") {
  auto task = testing::random_task(20, 6, 4);
  task.records.push_back({*task.wild_type, 0.0, std::nullopt, ""});
  CHECK(sampling_pool(task).size() == 20);
  CHECK(sampling_pool(task, {false}).size() == 21);
}

TEST_CASE("split_registry") {
  std::vector<FitnessTask> tasks;
  for (int i = 0; i < 121; ++i) {
    FitnessTask t;
    t.name = "task" + std::to_string(i);
    tasks.push_back(t);
  }
  SplitSpec spec;
  for (int i = 0; i < 8; ++i) spec.holdout_task_names.push_back("task" + std::to_string(i * 10));
  const auto [train, test] = split_registry(tasks, spec);
  CHECK(train.size() == 113);
  CHECK(test.size() == 8);
  for (const auto& t : train) {
    CHECK(std::none_of(test.begin(), test.end(), [&](const FitnessTask& u) { return u.name == t.name; }));
  }

  const auto [all, none] = split_registry(tasks, SplitSpec{});
  CHECK(all.size() == 121);
  CHECK(none.empty());

  SplitSpec bad;
  bad.holdout_task_names = {"missing"};
  CHECK_THROWS_AS(split_registry(tasks, bad), UnknownTask);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(0, "a") == derive_seed(0, "a"));
  CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
  CHECK(derive_seed(0, "a", 1) != derive_seed(0, "a", 2));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("alphabet lookups") {
  const Alphabet a("ACD");
  CHECK(a.index('D') == 2);
  CHECK(a.encode("DCA") == std::vector<int>{2, 1, 0});
  CHECK_THROWS_AS(a.index('X'), UnknownToken);
  CHECK_THROWS_AS(Alphabet("AA"), InvalidSpec);
}

TEST_CASE("validate_task enforces distinct sequences and the length cap") {
  auto t = task_with_labels({1, 2, 3});
  CHECK_NOTHROW(validate_task(t));
  CHECK_THROWS(validate_task(t, 1));
  t.records[1].sequence = t.records[0].sequence;
  CHECK_THROWS_AS(validate_task(t), DuplicateSequence);
}
