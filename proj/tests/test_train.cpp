#include <doctest.h>

#include <map>
#include <set>

#include "metalic/train.hpp"
#include "support.hpp"

using namespace metalic;

namespace {

TrainConfig tiny_train(std::int64_t steps = 6) {
  TrainConfig c;
  c.total_steps = steps;
  c.warmup_steps = 2;
  c.peak_lr = 1e-3;
  c.batch_size = 2;
  c.support_sizes = {0, 3, 5};
  c.n_query = 4;
  c.log_every = 0;
  c.seed = 11;
  return c;
}

std::vector<FitnessTask> tiny_tasks() {
  return {testing::random_task(30, 8, 1, "a"), testing::random_task(30, 8, 2, "b"),
          testing::random_task(30, 8, 3, "c")};
}

}  // namespace

TEST_CASE("training is deterministic for a seed and moves the parameters") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const auto tasks = tiny_tasks();
  const auto config = tiny_train();
  auto s1 = start_training(model, config);
  auto s2 = start_training(model, config);
  const auto init = s1.params;
  const auto h1 = meta_train(model, tasks, config, LossConfig{}, s1);
  const auto h2 = meta_train(model, tasks, config, LossConfig{}, s2);
  CHECK(s1.params == s2.params);
  CHECK_FALSE(s1.params == init);
  REQUIRE(h1.size() == 6);
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].step == static_cast<std::int64_t>(i + 1));
    CHECK(h1[i].loss == h2[i].loss);
    CHECK(h1[i].lr == lr_schedule(h1[i].step, 6, 2, 1e-3, config.min_lr_fraction));
  }
  CHECK(h1[0].lr > 0.0);
}

TEST_CASE("the gradient counter advances once per optimizer step") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const auto tasks = tiny_tasks();
  auto config = tiny_train(5);
  config.batch_size = 4;
  auto state = start_training(model, config);
  meta_train(model, tasks, config, LossConfig{}, state);
  CHECK(state.gradient_computations == 5);
  CHECK(state.optimizer.steps_taken() == 5);
}

TEST_CASE("resuming from a mid-run state is bit-exact") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const auto tasks = tiny_tasks();
  const auto config = tiny_train(8);
  auto straight = start_training(model, config);
  meta_train(model, tasks, config, LossConfig{}, straight);

  auto first = start_training(model, config);
  meta_train(model, tasks, config, LossConfig{}, first, {}, 3);
  CHECK(first.step == 3);
  TrainState copy = first;
  meta_train(model, tasks, config, LossConfig{}, copy);
  CHECK(copy.params == straight.params);
  CHECK(copy.gradient_computations == straight.gradient_computations);
}

TEST_CASE("checkpoint sink sees periodic and final tags") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const auto tasks = tiny_tasks();
  auto config = tiny_train(6);
  config.checkpoint_every = 2;
  auto state = start_training(model, config);
  std::vector<std::pair<std::int64_t, std::string>> seen;
  meta_train(model, tasks, config, LossConfig{}, state,
             [&](const TrainState& s, std::string_view tag) { seen.emplace_back(s.step, std::string(tag)); });
  const std::vector<std::pair<std::int64_t, std::string>> expected{{2, "periodic"}, {4, "periodic"}, {6, "final"}};
  CHECK(seen == expected);
}

TEST_CASE("training contexts honor the support size list and the task size") {
  const auto task = testing::random_task(20, 8, 4);
  auto config = tiny_train();
  config.support_sizes = {0, 7};
  config.n_query = 5;
  Rng rng(3);
  std::set<std::size_t> shots;
  for (int i = 0; i < 200; ++i) {
    const auto c = sample_training_context(task, config, rng);
    shots.insert(c.shot());
    CHECK(c.query_size() == 5);
    std::set<std::size_t> ids(c.support_ids.begin(), c.support_ids.end());
    for (auto q : c.query_ids) CHECK(ids.count(q) == 0);
  }
  CHECK(shots == std::set<std::size_t>{0, 7});

  config.support_sizes = {100};
  const auto c = sample_training_context(task, config, rng);
  CHECK(c.shot() + c.query_size() == sampling_pool(task).size());

  config.support_sizes = {4};
  Rng fixed(5);
  for (int i = 0; i < 20; ++i) CHECK(sample_training_context(task, config, fixed).shot() == 4);
}

TEST_CASE("task_mix weights families") {
  std::vector<FitnessTask> tasks = tiny_tasks();
  tasks[0].family = FamilyTag::single_mutant;
  tasks[1].family = FamilyTag::multi_mutant;
  tasks[2].family = FamilyTag::multi_mutant;
  Rng rng(9);
  std::map<std::string, int> counts;
  const TaskSampler mixed(tasks, "single_mutant:3,multi_mutant:1");
  for (int i = 0; i < 4000; ++i) ++counts[mixed.next(rng).name];
  CHECK(counts["a"] / 4000.0 == doctest::Approx(0.75).epsilon(0.05));
  CHECK(counts["b"] / 4000.0 == doctest::Approx(0.125).epsilon(0.2));

  counts.clear();
  const TaskSampler uniform(tasks, "");
  for (int i = 0; i < 3000; ++i) ++counts[uniform.next(rng).name];
  CHECK(counts["a"] / 3000.0 == doctest::Approx(1.0 / 3).epsilon(0.1));

  CHECK_THROWS_AS(TaskSampler(tasks, "synthetic:1"), InsufficientData);
  CHECK_THROWS_AS(TaskSampler(tasks, "single_mutant"), InvalidConfig);
  CHECK_THROWS_AS(TaskSampler(tasks, "single_mutant:0"), InvalidConfig);
  CHECK_THROWS_AS(TaskSampler({}, ""), InsufficientData);
}

TEST_CASE("invalid training configs are rejected") {
  auto c = tiny_train();
  c.warmup_steps = c.total_steps;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = tiny_train();
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = tiny_train();
  c.support_sizes = {};
  CHECK_THROWS_AS(validate(c), InvalidConfig);
  c = tiny_train();
  c.n_query = 1;
  CHECK_THROWS_AS(validate(c), InvalidConfig);
}

TEST_CASE("divergence raises NonFiniteLoss after a diagnostic checkpoint") {
  const AxialRegressor model(testing::tiny_config(), testing::tiny_provider());
  const auto tasks = tiny_tasks();
  const auto config = tiny_train(3);
  auto state = start_training(model, config);
  state.params.flat()[0] = std::numeric_limits<float>::infinity();
  std::vector<std::string> tags;
  CHECK_THROWS_AS(meta_train(model, tasks, config, LossConfig{}, state,
                             [&](const TrainState&, std::string_view tag) { tags.emplace_back(tag); }),
                  NonFiniteLoss);
  CHECK(tags == std::vector<std::string>{"diagnostic"});
}
