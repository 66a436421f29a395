#include <doctest.h>

#include <cstring>
#include <fstream>

#include "metalic/data.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("load_task_csv standardizes labels") {
  const auto dir = testing::scratch_dir("data_csv");
  write_file(dir / "three.csv", "sequence,fitness\nACD,1\nACE,2\nACF,3\n");
  const auto task = load_task_csv(dir / "three.csv");
  CHECK(task.name == "three");
  REQUIRE(task.size() == 3);
  const double sd = std::sqrt(2.0 / 3.0);
  CHECK(task.records[0].fitness == doctest::Approx(-1 / sd).epsilon(1e-12));
  CHECK(task.records[1].fitness == doctest::Approx(0.0));
  CHECK(task.records[2].fitness == doctest::Approx(1 / sd).epsilon(1e-12));
  CHECK(task.family == FamilyTag::synthetic);
}

TEST_CASE("load_task_csv reads optional columns") {
  const auto dir = testing::scratch_dir("data_optional");
  write_file(dir / "opt.csv", "sequence,fitness,aux_score,mutant\nACD,1,0.5,\nACE,2,-0.5,D3E\nAAE,3,0.25,C2A:D3E\n");
  const auto task = load_task_csv(dir / "opt.csv");
  CHECK(task.has_aux());
  CHECK(*task.records[1].aux_score == -0.5);
  CHECK(task.wild_type == std::optional<std::string>("ACD"));
  CHECK(task.records[2].mutant == "C2A:D3E");
  CHECK(task.family == FamilyTag::multi_mutant);
}

TEST_CASE("load_task_csv errors") {
  const auto dir = testing::scratch_dir("data_errors");
  write_file(dir / "dup.csv", "sequence,fitness\nACD,1\nACD,2\nACE,3\n");
  CHECK_THROWS_AS(load_task_csv(dir / "dup.csv"), DuplicateSequence);
  write_file(dir / "nofit.csv", "sequence,score\nACD,1\nACE,2\n");
  CHECK_THROWS_AS(load_task_csv(dir / "nofit.csv"), ParseError);
  write_file(dir / "bad.csv", "sequence,fitness\nACD,abc\nACE,2\n");
  CHECK_THROWS_AS(load_task_csv(dir / "bad.csv"), ParseError);
  write_file(dir / "flat.csv", "sequence,fitness\nACD,1\nACE,1\n");
  CHECK_THROWS_AS(load_task_csv(dir / "flat.csv"), DegenerateTask);
  write_file(dir / "token.csv", "sequence,fitness\nACB,1\nACE,2\n");
  CHECK_THROWS_AS(load_task_csv(dir / "token.csv"), ParseError);
}

TEST_CASE("task CSVs round-trip") {
  const auto dir = testing::scratch_dir("data_roundtrip");
  const auto task = testing::random_task(40, 8, 5, "rt");
  write_task_csv(task, dir / "rt.csv");
  const auto back = load_task_csv(dir / "rt.csv", task.alphabet);
  REQUIRE(back.size() == task.size());
  for (std::size_t i = 0; i < task.size(); ++i) {
    CHECK(back.records[i].sequence == task.records[i].sequence);
    CHECK(back.records[i].fitness == doctest::Approx(task.records[i].fitness).epsilon(1e-12));
    CHECK(back.records[i].mutant == task.records[i].mutant);
  }
}

TEST_CASE("registry loading is deterministic and ordered") {
  const auto dir = testing::scratch_dir("data_registry");
  for (int i : {2, 0, 1}) write_task_csv(testing::random_task(20, 6, static_cast<std::uint64_t>(i), "t" + std::to_string(i)), dir / ("t" + std::to_string(i) + ".csv"));
  const auto alphabet = Alphabet::synthetic(6);
  const auto a = load_registry(dir, alphabet);
  const auto b = load_registry(dir, alphabet);
  CHECK(a == b);
  REQUIRE(a.size() == 3);
  CHECK(a.tasks()[0].name == "t0");
  CHECK(a.tasks()[2].name == "t2");
  CHECK(a.provenance("t1") == (dir / "t1.csv").string());
  CHECK_THROWS_AS(a.at("nope"), UnknownTask);
}

TEST_CASE("filter_by_length") {
  TaskRegistry reg;
  auto short_task = testing::random_task(10, 6, 1, "short");
  reg.add(short_task);
  FitnessTask long_task;
  long_task.name = "long";
  long_task.alphabet = Alphabet::amino_acids();
  long_task.records.push_back({std::string(800, 'A'), 1.0, std::nullopt, ""});
  long_task.records.push_back({std::string(800, 'C'), 2.0, std::nullopt, ""});
  reg.add(long_task);

  const auto kept = filter_by_length(reg, 750);
  CHECK(kept.size() == 1);
  CHECK(kept.contains("short"));
  CHECK(filter_by_length(reg, 1000).size() == 2);
  CHECK(filter_by_length(reg, 0).size() == 0);
}

TEST_CASE("embedding tables round-trip bit-exactly") {
  const auto dir = testing::scratch_dir("data_embed");
  EmbeddingTable table(320);
  std::mt19937 rng(1);
  std::normal_distribution<float> n;
  for (const std::string key : {"ACDEFGHIKL", "MNPQ"}) {
    MatF m(static_cast<Eigen::Index>(key.size()), 320);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    table.insert(key, m);
  }
  write_embedding_table(table, dir / "emb");
  const auto back = load_embedding_table(dir / "emb.manifest");
  CHECK(back.dim() == 320);
  CHECK(back.at("ACDEFGHIKL").rows() == 10);
  CHECK(back.at("ACDEFGHIKL").cols() == 320);
  for (const auto& key : table.keys()) {
    CHECK(std::memcmp(back.at(key).data(), table.at(key).data(), sizeof(float) * table.at(key).size()) == 0);
  }
  CHECK_THROWS_AS(back.at("missing"), MissingEmbedding);
}

TEST_CASE("embedding shape errors") {
  EmbeddingTable table(4);
  CHECK_THROWS_AS(table.insert("ACDEFGHIKL", MatF::Zero(9, 4)), ShapeMismatch);
  CHECK_THROWS_AS(table.insert("AC", MatF::Zero(2, 5)), ShapeMismatch);

  const auto dir = testing::scratch_dir("data_embed_bad");
  EmbeddingTable ok(4);
  ok.insert("ACDEFGHIKL", MatF::Ones(10, 4));
  write_embedding_table(ok, dir / "emb");
  // Claim 9 rows for a key of length 10.
  write_file(dir / "emb.manifest", "ACDEFGHIKL\t0\t9\t4\n");
  CHECK_THROWS_AS(load_embedding_table(dir / "emb"), ShapeMismatch);
  write_file(dir / "emb.manifest", "ACDEFGHIKL\t0\t10\n");
  CHECK_THROWS_AS(load_embedding_table(dir / "emb"), FormatError);
  write_file(dir / "emb.manifest", "ACDEFGHIKL\t4\t10\t4\n");
  CHECK_THROWS_AS(load_embedding_table(dir / "emb"), FormatError);
}
