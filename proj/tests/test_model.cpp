#include <doctest.h>

#include <algorithm>

#include "metalic/model.hpp"
#include "metalic/objective.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

ContextBatch context_from(const FitnessTask& task, std::size_t shot, std::size_t queries, std::uint64_t seed) {
  Rng rng(seed);
  return sample_context(task, shot, queries, rng);
}

/// Relative error with an absolute floor so near-zero gradients do not dominate.
double rel_error(double a, double b) { return std::abs(a - b) / std::max(1e-3, std::max(std::abs(a), std::abs(b))); }

/// Analytic T-precision gradient vs central differences of the 64-bit loss at
/// the same (T-rounded) point. Float loss values carry too much rounding
/// noise for a finite difference to resolve 1e-3 relative error.
template <class T>
double max_gradcheck_error(const AxialRegressor& model, const ContextBatch& c, int probes, double h,
                           std::uint64_t seed) {
  Rng rng(seed);
  const auto params = model.init(rng).template cast<T>();
  auto grads = params.zeros_like();
  const LossConfig loss;
  context_loss<T>(model, params, c, loss, nullptr, &grads);
  const auto base = params.template cast<double>();
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const std::size_t i = pick(rng);
    auto plus = base, minus = base;
    plus.flat()[i] += h;
    minus.flat()[i] -= h;
    const double lp = context_loss<double>(model, plus, c, loss, nullptr, nullptr);
    const double lm = context_loss<double>(model, minus, c, loss, nullptr, nullptr);
    worst = std::max(worst, rel_error((lp - lm) / (2 * h), static_cast<double>(grads.flat()[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = ModelConfig::desk_scale();
  CHECK_NOTHROW(validate(c));
  CHECK(c.embed_dim / c.n_heads == 16);
  c.embed_dim = 66;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  const auto paper = ModelConfig::paper_scale();
  CHECK(paper.embed_dim == 768);
  CHECK(paper.n_layers == 5);
  CHECK(paper.axial_ffn_dim == 400);
  CHECK(paper.mlp_layers == std::vector<int>{768, 768, 768, 768});
  CHECK(paper.attention_dropout == 0.1);
}

TEST_CASE("init is deterministic and follows the scheme") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng a(5), b(5);
  const auto pa = model.init(a);
  const auto pb = model.init(b);
  CHECK(pa == pb);
  const auto& layout = pa.layout();
  for (TensorId id = 0; id < layout.tensors().size(); ++id) {
    const auto& spec = layout.spec(id);
    const auto values = pa.tensor(id);
    if (spec.is_bias) {
      CHECK(std::all_of(values.begin(), values.end(), [](float v) { return v == 0.0f; }));
    } else if (spec.name.find("norm.weight") != std::string::npos) {
      CHECK(std::all_of(values.begin(), values.end(), [](float v) { return v == 1.0f; }));
    } else if (spec.name.find("proj.weight") != std::string::npos || spec.name.find("attn") != std::string::npos) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(spec.rows));
      CHECK(std::all_of(values.begin(), values.end(), [&](float v) { return std::abs(v) <= bound; }));
    }
  }
}

TEST_CASE("grid shapes") {
  const auto task = testing::random_task(30, 10, 1);
  const auto c = context_from(task, 1, 2, 0);
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(0);
  const auto params = model.init(rng);
  const auto g = model.assemble(c, params);
  CHECK(g.rows == 3);
  CHECK(g.cols() == 11);
  CHECK(g.cells.rows() == 33);
  CHECK(g.cells.cols() == 8);
  CHECK(model.forward(params, g).scores.size() == 2);

  auto aux_config = testing::tiny_config();
  aux_config.use_aux_channel = true;
  const AxialRegressor aux_model(aux_config, testing::tiny_provider());
  auto ca = c;
  for (auto& r : ca.support) r.aux_score = 0.5;
  for (auto& q : ca.query) q.aux_score = -0.5;
  Rng rng2(0);
  const auto aux_params = aux_model.init(rng2);
  const auto ga = aux_model.assemble(ca, aux_params);
  CHECK(ga.cols() == 12);
  CHECK_THROWS_AS(aux_model.assemble(c, aux_params), InvalidConfig);
}

TEST_CASE("query fitness cells carry the projection of zero regardless of labels") {
  const auto task = testing::random_task(30, 10, 1);
  auto c = context_from(task, 3, 4, 0);
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(0);
  const auto params = model.init(rng);
  const auto g = model.assemble(c, params);
  for (auto& y : c.query_labels) y = 1e6;
  const auto g2 = model.assemble(c, params);
  CHECK(g.cells == g2.cells);
  const auto& layout = params.layout();
  const auto fb = params.mat(layout.id("fitness_proj.bias"));
  const auto flags = params.mat(layout.id("flag_embed.weight"));
  for (int r = 3; r < 7; ++r) {
    const RowVec<float> expect = fb.row(0) + flags.row(1);
    CHECK(g.cells.row(static_cast<Eigen::Index>(g.cell(r, g.fitness_col()))).isApprox(expect));
  }
}

TEST_CASE("without column attention a query score ignores every other row") {
  auto config = testing::tiny_config();
  config.column_attention_enabled = false;
  const AxialRegressor model(config, testing::tiny_provider());
  Rng rng(2);
  const auto params = model.init(rng).cast<double>();
  const auto task = testing::random_task(60, 8, 3);
  auto c = context_from(task, 4, 5, 1);
  const auto base = model.predict<double>(params, c.support, c.query);
  // Replace every row except query 2; its score must not move.
  auto other = context_from(task, 4, 5, 99);
  other.query[2] = c.query[2];
  const auto moved = model.predict<double>(params, other.support, other.query);
  CHECK(moved[2] == base[2]);
}

TEST_CASE("padding columns receive no attention and are not pooled") {
  auto config = testing::tiny_config();
  config.column_attention_enabled = false;
  const AxialRegressor model(config, testing::tiny_provider());
  Rng rng(2);
  const auto params = model.init(rng).cast<double>();
  const std::vector<Example> short_only{{"ACDEFA", std::nullopt}, {"ACCDEA", std::nullopt}};
  std::vector<Example> padded = short_only;
  padded[1].sequence = "ACCDEAFF";  // widens the grid; row 0 now has two padding cells
  const auto a = model.predict<double>(params, {}, short_only);
  const auto b = model.predict<double>(params, {}, padded);
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
}

TEST_CASE("permuting query rows permutes scores") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(4);
  const auto params = model.init(rng).cast<double>();
  const auto task = testing::random_task(60, 8, 3);
  const auto c = context_from(task, 5, 6, 2);
  const auto base = model.predict<double>(params, c.support, c.query);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<Example> shuffled;
  for (auto i : perm) shuffled.push_back(c.query[i]);
  const auto out = model.predict<double>(params, c.support, shuffled);
  for (std::size_t k = 0; k < perm.size(); ++k) CHECK(out[k] == doctest::Approx(base[perm[k]]).epsilon(1e-12));
}

TEST_CASE("predict") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(4);
  const auto params = model.init(rng);
  const auto task = testing::random_task(60, 8, 3);
  const auto c = context_from(task, 5, 4, 2);
  const auto zero_shot = model.predict<float>(params, {}, c.query);
  CHECK(zero_shot.size() == 4);
  CHECK(model.predict<float>(params, {}, c.query) == zero_shot);

  const auto with_support = model.predict<float>(params, c.support, c.query);
  auto changed = c.support;
  changed[0].fitness += 3.0;
  const auto after = model.predict<float>(params, changed, c.query);
  bool any = false;
  for (std::size_t i = 0; i < after.size(); ++i) any = any || after[i] != with_support[i];
  CHECK(any);
}

TEST_CASE("dropout draws from the supplied generator") {
  auto config = testing::tiny_config();
  config.attention_dropout = 0.3;
  const AxialRegressor model(config, testing::tiny_provider());
  Rng rng(4);
  const auto params = model.init(rng);
  const auto task = testing::random_task(60, 8, 3);
  const auto c = context_from(task, 5, 4, 2);
  const auto g = model.assemble(c, params);
  Rng d1(7), d2(7), d3(8);
  ForwardOptions o1, o2, o3;
  o1.dropout_rng = &d1;
  o2.dropout_rng = &d2;
  o3.dropout_rng = &d3;
  const auto a = model.forward(params, g, o1).scores;
  CHECK(model.forward(params, g, o2).scores == a);
  CHECK(model.forward(params, g, o3).scores != a);
  CHECK(model.forward(params, g).scores != a);
}

TEST_CASE("captured attention rows are probability simplices") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(4);
  const auto params = model.init(rng);
  FitnessTask task = testing::random_task(60, 8, 3);
  auto c = context_from(task, 5, 4, 2);
  c.query[0].sequence = c.query[0].sequence.substr(0, 6);  // ragged rows
  ForwardOptions o;
  o.capture_attention = true;
  const auto pass = model.forward(params, model.assemble(c, params), o);
  REQUIRE(pass.attention.has_value());
  const auto& map = *pass.attention;
  CHECK(map.rows == 9);
  for (int l = 0; l < map.layers; ++l) {
    for (int h = 0; h < map.heads; ++h) {
      for (int i = 0; i < map.rows; ++i) {
        double sum = 0;
        for (int j = 0; j < map.rows; ++j) {
          CHECK(map.at(l, h, i, j) >= 0.0);
          sum += map.at(l, h, i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("attention cost counter matches the closed form") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(4);
  const auto params = model.init(rng);
  const auto task = testing::random_task(80, 12, 3);
  for (int k : {4, 16, 64}) {
    const auto c = context_from(task, static_cast<std::size_t>(k / 2), static_cast<std::size_t>(k - k / 2), 1);
    const auto pass = model.forward(params, model.assemble(c, params));
    const auto closed = model.closed_form_cost(k, 12);
    CHECK(pass.cost.row_terms == closed.row_terms);
    CHECK(pass.cost.column_terms == closed.column_terms);
    const std::uint64_t kk = static_cast<std::uint64_t>(k), lt = 13;
    CHECK(closed.per_block() == kk * lt * lt + lt * kk * kk);
  }
}

TEST_CASE("non-finite parameters raise NonFiniteActivation") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng rng(4);
  auto params = model.init(rng);
  const auto task = testing::random_task(30, 8, 3);
  const auto c = context_from(task, 2, 3, 2);
  params.mat(params.layout().id("head.out.weight"))(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(model.predict<float>(params, c.support, c.query), NonFiniteActivation);
}

TEST_CASE("analytic gradients match central differences") {
  const auto task = testing::random_task(40, 6, 8);
  const auto c = context_from(task, 2, 2, 3);  // K = 4, L = 6

  SUBCASE("64-bit") {
    const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
    CHECK(max_gradcheck_error<double>(model, c, 60, 1e-6, 1) < 1e-5);
  }
  SUBCASE("64-bit with aux channel and learned table") {
    auto config = testing::tiny_config();
    config.use_aux_channel = true;
    const AxialRegressor model(config, EmbeddingProvider::learned_table(Alphabet::synthetic(6), 4));
    auto ca = c;
    for (auto& r : ca.support) r.aux_score = 0.25;
    ca.query[0].aux_score = -1.0;
    ca.query[1].aux_score = 0.5;
    CHECK(max_gradcheck_error<double>(model, ca, 60, 1e-6, 2) < 1e-5);
  }
  SUBCASE("64-bit without column attention") {
    auto config = testing::tiny_config();
    config.column_attention_enabled = false;
    const AxialRegressor model(config, testing::tiny_provider());
    CHECK(max_gradcheck_error<double>(model, c, 60, 1e-6, 3) < 1e-5);
  }
  SUBCASE("32-bit") {
    const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
    CHECK(max_gradcheck_error<float>(model, c, 60, 1e-6, 4) < 1e-3);
  }
}
