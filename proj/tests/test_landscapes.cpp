#include <doctest.h>

#include <map>
#include <set>
#include <tuple>

#include "metalic/landscapes.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

int hamming(const std::string& a, const std::string& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

std::vector<std::string> all_sequences(int length, const Alphabet& alphabet) {
  std::vector<std::string> out{""};
  for (int i = 0; i < length; ++i) {
    std::vector<std::string> next;
    for (const auto& s : out) {
      for (char c : alphabet.symbols()) next.push_back(s + c);
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("additive landscape equals a hand summation") {
  const std::vector<std::vector<double>> c{{0.1, 2.0, -1.0}, {3.0, 0.5, 0.25}, {-0.7, 0.0, 1.1}, {4.0, -4.0, 0.3}};
  const auto land = Landscape::from_additive_tables(c);
  const Alphabet& a = land.alphabet();
  for (const auto& s : all_sequences(4, a)) {
    double expect = 0;
    for (int i = 0; i < 4; ++i) expect += c[static_cast<std::size_t>(i)][static_cast<std::size_t>(a.index(s[static_cast<std::size_t>(i)]))];
    CHECK(land(s) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("NK with K = 0 is bitwise the additive oracle on its tables") {
  LandscapeSpec spec;
  spec.n_sites = 5;
  spec.alphabet_size = 3;
  spec.k_neighbors = 0;
  spec.rng_seed = 9;
  const Landscape nk(spec);
  std::vector<std::vector<double>> tables;
  for (int i = 0; i < 5; ++i) tables.push_back(nk.site_table(i));
  const auto additive = Landscape::from_additive_tables(tables);
  for (const auto& s : all_sequences(5, nk.alphabet())) CHECK(nk(s) == additive(s));
}

TEST_CASE("NK lookup keys use the cyclic neighbours") {
  LandscapeSpec spec;
  spec.n_sites = 4;
  spec.alphabet_size = 2;
  spec.k_neighbors = 2;
  spec.rng_seed = 1;
  const Landscape nk(spec);
  const auto& a = nk.alphabet();
  for (const auto& s : all_sequences(4, a)) {
    double expect = 0;
    for (int i = 0; i < 4; ++i) {
      std::size_t key = 0, stride = 1;
      for (int m = 0; m <= 2; ++m) {
        key += static_cast<std::size_t>(a.index(s[static_cast<std::size_t>((i + m) % 4)])) * stride;
        stride *= 2;
      }
      expect += nk.site_table(i)[key];
    }
    CHECK(nk(s) == expect);
  }
}

TEST_CASE("landscapes are deterministic under a fixed seed") {
  for (auto kind : {LandscapeKind::additive, LandscapeKind::nk, LandscapeKind::epistatic}) {
    LandscapeSpec spec;
    spec.n_sites = 4;
    spec.alphabet_size = 3;
    spec.kind = kind;
    spec.rng_seed = 77;
    const Landscape a(spec), b(spec);
    for (const auto& s : all_sequences(4, a.alphabet())) CHECK(a(s) == b(s));
  }
}

TEST_CASE("additive single-mutant effects depend only on the mutated site") {
  LandscapeSpec spec;
  spec.n_sites = 4;
  spec.alphabet_size = 3;
  spec.kind = LandscapeKind::additive;
  spec.rng_seed = 5;
  const Landscape land(spec);
  const auto seqs = all_sequences(4, land.alphabet());
  // effect[site][from][to] must agree across every background.
  std::map<std::tuple<std::size_t, char, char>, double> effect;
  for (const auto& s : seqs) {
    for (const auto& m : enumerate_single_mutants(s, land.alphabet())) {
      std::size_t site = 0;
      while (s[site] == m[site]) ++site;
      const auto key = std::make_tuple(site, s[site], m[site]);
      const double delta = land(m) - land(s);
      const auto [it, fresh] = effect.emplace(key, delta);
      if (!fresh) CHECK(it->second == doctest::Approx(delta).epsilon(1e-12));
    }
  }
}

TEST_CASE("invalid specs are rejected") {
  LandscapeSpec spec;
  spec.n_sites = 3;
  spec.k_neighbors = 3;
  CHECK_THROWS_AS(Landscape{spec}, InvalidSpec);
  spec.k_neighbors = 0;
  spec.noise_std = -1;
  CHECK_THROWS_AS(Landscape{spec}, InvalidSpec);
  spec.noise_std = 0;
  spec.alphabet_size = 1;
  CHECK_THROWS_AS(Landscape{spec}, InvalidSpec);
}

TEST_CASE("enumerate_single_mutants counts L x (A - 1)") {
  const auto aa = Alphabet::amino_acids();
  const auto m = enumerate_single_mutants("ACDE", aa);
  CHECK(m.size() == 4 * 19);
  CHECK(std::set<std::string>(m.begin(), m.end()).size() == m.size());
  for (const auto& s : m) CHECK(hamming(s, "ACDE") == 1);
  CHECK(enumerate_single_mutants("A", Alphabet("AB")).size() == 1);
}

TEST_CASE("mutant_space_size matches enumeration") {
  const Alphabet a = Alphabet::synthetic(4);
  const std::string wt = "AAAAA";
  Rng rng(0);
  const auto capacity = static_cast<std::size_t>(mutant_space_size(5, 4, 2));
  CHECK(capacity == 5 * 3 + 10 * 9);
  const auto all = sample_mutants(wt, a, 2, capacity, rng);
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == capacity);
  CHECK_THROWS_AS(sample_mutants(wt, a, 2, capacity + 1, rng), InsufficientSpace);
}

TEST_CASE("make_synthetic_task with single mutants") {
  LandscapeSpec spec;
  spec.n_sites = 10;
  spec.alphabet_size = 6;
  Rng rng(3);
  const auto task = make_synthetic_task(spec, 50, 1, rng);
  CHECK(task.size() == 50);
  CHECK(task.family == FamilyTag::single_mutant);
  std::set<std::string> seen;
  for (const auto& r : task.records) {
    CHECK(hamming(r.sequence, *task.wild_type) == 1);
    seen.insert(r.sequence);
  }
  CHECK(seen.size() == 50);
}

TEST_CASE("noise-free task labels are the standardized oracle values") {
  LandscapeSpec spec;
  spec.n_sites = 8;
  spec.alphabet_size = 5;
  spec.k_neighbors = 2;
  spec.rng_seed = 11;
  Rng rng(4);
  const auto task = make_synthetic_task(spec, 120, 3, rng);
  CHECK(task.family == FamilyTag::multi_mutant);
  const Landscape oracle(spec);
  std::vector<double> raw;
  for (const auto& r : task.records) raw.push_back(oracle(r.sequence));
  const auto z = standardize(raw);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(task.records[i].fitness == doctest::Approx(z[i]).epsilon(1e-12));
  CHECK(testing::naive_spearman(raw, task.labels()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("task families are reproducible and share structure") {
  FamilySpec spec;
  spec.n_records = 60;
  const auto a = make_task_family(spec, 4, 123);
  const auto b = make_task_family(spec, 4, 123);
  REQUIRE(a.size() == 4);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].name == b[t].name);
    CHECK(a[t].labels() == b[t].labels());
  }
  CHECK(a[0].name == "task_000");

  // Labels are the standardized family oracle values.
  const FamilyOracle oracle(spec, 123, 4);
  std::vector<double> raw;
  for (const auto& r : a[2].records) raw.push_back(oracle.task_fitness(2, *a[2].wild_type, r.sequence));
  const auto z = standardize(raw);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(a[2].records[i].fitness == doctest::Approx(z[i]).epsilon(1e-12));
}

TEST_CASE("single_mutant_fraction tags tasks") {
  FamilySpec spec;
  spec.n_records = 40;
  spec.single_mutant_fraction = 1.0;
  for (const auto& t : make_task_family(spec, 3, 1)) CHECK(t.family == FamilyTag::single_mutant);
  spec.single_mutant_fraction = 0.0;
  for (const auto& t : make_task_family(spec, 3, 1)) CHECK(t.family == FamilyTag::multi_mutant);
}
