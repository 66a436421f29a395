#include <doctest.h>

#include <numeric>
#include <set>

#include "metalic/adapt.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

std::vector<Record> support_of(const FitnessTask& task, std::size_t n) {
  return {task.records.begin(), task.records.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

TEST_CASE("sub-sample sizes") {
  FinetuneConfig c;
  CHECK(subsample_sizes(128, c) == std::pair{50, 78});
  CHECK(subsample_sizes(50, c) == std::pair{50, 0});
  CHECK(subsample_sizes(16, c) == std::pair{8, 8});
  CHECK(subsample_sizes(3, c) == std::pair{2, 1});
  CHECK(subsample_sizes(2, c) == std::pair{2, 0});
  CHECK_THROWS_AS(subsample_sizes(1, c), SupportTooSmall);
  CHECK_THROWS_AS(subsample_sizes(0, c), EmptySupport);
  c.allow_fallback = false;
  CHECK_THROWS_AS(subsample_sizes(16, c), SupportTooSmall);
  c.allow_fallback = true;
  c.subsample_support_size = 20;
  CHECK(subsample_sizes(128, c) == std::pair{50, 20});
  CHECK_THROWS_AS(subsample_sizes(60, c), InvalidConfig);
}

TEST_CASE("fine-tuning targets never appear in their own context") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng init(1);
  const auto params = model.init(init);
  const auto task = testing::random_task(200, 8, 2);
  const auto support = support_of(task, 128);
  FinetuneConfig c;
  c.lr = 1e-3;
  Rng rng(3);
  const auto result = finetune(model, params, support, {}, c, LossConfig{}, rng);
  REQUIRE(result.trace.size() == 100);
  CHECK(result.gradient_computations == 100);
  for (const auto& step : result.trace) {
    CHECK(step.target_ids.size() == 50);
    CHECK(step.context_ids.size() == 78);
    std::set<std::size_t> targets(step.target_ids.begin(), step.target_ids.end());
    CHECK(targets.size() == 50);
    for (auto id : step.context_ids) {
      CHECK(targets.count(id) == 0);
      CHECK(id < 128);
    }
  }
  CHECK(result.trace.front().lr == doctest::Approx(lr_schedule(1, 100, 0, 1e-3, c.min_lr_fraction)));
  CHECK_FALSE(result.params == params);
  CHECK(result.best_step == 100);
}

TEST_CASE("early stopping keeps the best evaluated snapshot") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng init(1);
  const auto params = model.init(init);
  const auto task = testing::random_task(200, 8, 2);
  const auto support = support_of(task, 40);
  const std::vector<Record> early(task.records.begin() + 40, task.records.begin() + 80);
  FinetuneConfig c;
  c.steps = 25;
  c.lr = 3e-3;
  Rng rng(4);
  const auto result = finetune(model, params, support, early, c, LossConfig{}, rng);
  std::vector<int> steps;
  for (const auto& [s, score] : result.evaluations) steps.push_back(s);
  CHECK(steps == std::vector<int>{0, 10, 20, 25});
  double best = -2;
  int best_step = -1;
  for (const auto& [s, score] : result.evaluations) {
    if (score > best) best = score, best_step = s;
  }
  CHECK(result.best_step == best_step);
  CHECK(result.best_score == best);
  if (best_step == 0) CHECK(result.params == params);

  c.steps = 0;
  CHECK(finetune(model, params, support, early, c, LossConfig{}, rng).params == params);
}

TEST_CASE("fine-tuning with an empty support is refused") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng init(1);
  const auto params = model.init(init);
  Rng rng(1);
  CHECK_THROWS_AS(finetune(model, params, {}, {}, FinetuneConfig{}, LossConfig{}, rng), EmptySupport);
}

TEST_CASE("Reptile with beta = 1 and one task lands on the adapted parameters") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng init(7);
  const auto theta = model.init(init).cast<double>();
  const auto task = testing::random_task(100, 8, 5);
  ReptileConfig c;
  c.outer = OuterUpdate::plain;
  c.outer_lr = 1.0;
  c.inner_lr = 1e-2;
  c.inner_steps = 3;
  Rng rng(8);
  const auto adapted = reptile_inner<double>(model, theta, support_of(task, 64), c, LossConfig{}, rng);
  auto updated = theta;
  const std::vector<ParamSet<double>> batch{adapted};
  reptile_outer_update<double>(updated, batch, c, nullptr, 0.0);
  double worst = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    worst = std::max(worst, std::abs(updated.flat()[i] - adapted.flat()[i]));
  }
  CHECK(worst < 1e-12);
  CHECK_FALSE(adapted == theta);
}

TEST_CASE("Reptile with one SGD inner step equals SGD at beta * alpha") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  Rng init(7);
  const auto theta = model.init(init).cast<double>();
  const auto task = testing::random_task(100, 8, 5);
  const auto support = support_of(task, 64);
  ReptileConfig c;
  c.outer = OuterUpdate::plain;
  c.outer_lr = 0.3;
  c.inner_lr = 1e-2;
  c.inner_steps = 1;
  c.inner_optimizer = OptimizerKind::sgd;
  c.inner_clip_norm = 0.0;
  Rng rng(9);
  Rng replay = rng;
  const auto adapted = reptile_inner<double>(model, theta, support, c, LossConfig{}, rng);
  auto updated = theta;
  const std::vector<ParamSet<double>> batch{adapted};
  reptile_outer_update<double>(updated, batch, c, nullptr, 0.0);

  // Same sub-sample, plain gradient, one SGD step.
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), replay);
  const std::vector<std::size_t> targets(order.begin(), order.begin() + 50);
  const std::vector<std::size_t> context(order.begin() + 50, order.end());
  auto grads = theta.zeros_like();
  context_loss<double>(model, theta, make_context(support, context, targets), LossConfig{}, nullptr, &grads);
  auto sgd = theta;
  sgd_step(sgd, grads, 0.3 * 1e-2);
  double worst = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) worst = std::max(worst, std::abs(updated.flat()[i] - sgd.flat()[i]));
  CHECK(worst < 1e-7);
}

TEST_CASE("Reptile Adam outer update follows the pseudo-gradient") {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("w.weight", 1, 2);
  ParamSet<double> p(layout), a1(layout), a2(layout);
  p.flat()[0] = 1.0, p.flat()[1] = -1.0;
  a1.flat()[0] = 1.2, a1.flat()[1] = -1.0;
  a2.flat()[0] = 1.4, a2.flat()[1] = -0.8;
  ReptileConfig c;
  c.outer = OuterUpdate::adam;
  c.inner_lr = 0.1;
  Adam<double> outer(p, AdamConfig{});
  Adam<double> reference(p, AdamConfig{});
  auto q = p;
  ParamSet<double> pseudo(layout);
  pseudo.flat()[0] = -0.3 / 0.1;
  pseudo.flat()[1] = -0.1 / 0.1;
  const std::vector<ParamSet<double>> batch{a1, a2};
  reptile_outer_update<double>(p, batch, c, &outer, 1e-2);
  reference.step(q, pseudo, 1e-2);
  CHECK(p.flat()[0] == doctest::Approx(q.flat()[0]).epsilon(1e-12));
  CHECK(p.flat()[1] == doctest::Approx(q.flat()[1]).epsilon(1e-12));
  CHECK(p.flat()[0] > 1.0);
  CHECK_THROWS_AS(reptile_outer_update<double>(p, batch, c, nullptr, 1e-2), InvalidConfig);
}

TEST_CASE("Reptile meta-training counts inner steps per outer step") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const std::vector<FitnessTask> tasks{testing::random_task(60, 8, 1, "a"), testing::random_task(60, 8, 2, "b")};
  ReptileConfig c;
  c.meta_steps = 4;
  c.warmup_steps = 1;
  c.inner_steps = 3;
  c.task_batch = 2;
  c.support_size = 20;
  c.inner_batch = 10;
  c.inner_lr = 1e-3;
  c.outer_lr = 1e-3;
  auto state = start_reptile(model, c);
  const auto init = state.params;
  const auto history = reptile_meta_train(model, tasks, c, LossConfig{}, state);
  CHECK(history.size() == 4);
  CHECK(state.step == 4);
  CHECK(state.gradient_computations == 12);
  CHECK_FALSE(state.params == init);
  auto again = start_reptile(model, c);
  reptile_meta_train(model, tasks, c, LossConfig{}, again);
  CHECK(again.params == state.params);
}

TEST_CASE("Reptile test-time settings mirror the inner loop") {
  ReptileConfig r;
  r.inner_lr = 2e-3;
  r.finetune_steps = 5;
  r.inner_batch = 30;
  const auto f = reptile_finetune_config(r, FinetuneConfig{});
  CHECK(f.steps == 5);
  CHECK(f.lr == 2e-3);
  CHECK(f.subsample_query_size == 30);
  CHECK(lr_schedule(5, 5, 0, f.lr, f.min_lr_fraction) == doctest::Approx(2e-3));
}

TEST_CASE("invalid adaptation configs are rejected") {
  FinetuneConfig f;
  f.subsample_query_size = 1;
  CHECK_THROWS_AS(validate(f), InvalidConfig);
  ReptileConfig r;
  r.inner_lr = 0;
  CHECK_THROWS_AS(validate(r), InvalidConfig);
  CHECK_THROWS_AS(optimizer_kind_from_string("rmsprop"), InvalidConfig);
  CHECK_THROWS_AS(outer_update_from_string("nesterov"), InvalidConfig);
  CHECK(outer_update_from_string(to_string(OuterUpdate::plain)) == OuterUpdate::plain);
}
