#include "metalic/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "metalic/data.hpp"
#include "metalic/log.hpp"

namespace metalic {

namespace fs = std::filesystem;

namespace {

template <class E, class ToString, class FromString>
void bind_enum(ConfigBinder& b, const std::string& key, E& field, ToString to_str, FromString from_str) {
  b.bind(key, [&field, to_str] { return std::string(to_str(field)); },
         [&field, from_str](const std::string& v) { field = from_str(v); });
}

void bind_all(ConfigBinder& b, ExperimentConfig& c) {
  b.bind("name", c.name);
  b.bind("method", c.method);
  b.bind("seeds", c.seeds);
  b.bind("out_dir", c.out_dir);
  b.bind("tasks_dir", c.tasks_dir);
  b.bind("holdouts", c.holdouts);
  b.bind("ablations", c.ablations);
  b.bind("workers", c.workers);
  b.bind("resume", c.resume);

  auto& f = c.family;
  b.bind("family.n_sites", f.shared.n_sites);
  b.bind("family.alphabet_size", f.shared.alphabet_size);
  bind_enum(b, "family.kind", f.shared.kind, [](LandscapeKind k) { return to_string(k); },
            [](const std::string& v) { return landscape_kind_from_string(v); });
  b.bind("family.k_neighbors", f.shared.k_neighbors);
  b.bind("family.n_interactions", f.shared.n_interactions);
  b.bind("family.interaction_scale", f.shared.interaction_scale);
  b.bind("family.noise_std", f.shared.noise_std);
  b.bind("family.private_weight", f.private_weight);
  b.bind("family.sensitivity_weight", f.sensitivity_weight);
  b.bind("family.n_records", f.n_records);
  b.bind("family.max_mutations", f.max_mutations);
  b.bind("family.single_mutant_fraction", f.single_mutant_fraction);
  b.bind("family.name_prefix", f.name_prefix);
  b.bind("family.n_train_tasks", c.n_train_tasks);
  b.bind("family.n_test_tasks", c.n_test_tasks);

  b.bind("provider.kind", c.provider.kind);
  b.bind("provider.alphabet", c.provider.alphabet);
  b.bind("provider.dim", c.provider.dim);
  b.bind("provider.freeze_embeddings", c.provider.freeze);
  b.bind("provider.table", c.provider.table);

  auto& m = c.model;
  b.bind("model.embed_dim", m.embed_dim);
  b.bind("model.n_layers", m.n_layers);
  b.bind("model.n_heads", m.n_heads);
  b.bind("model.axial_ffn_dim", m.axial_ffn_dim);
  b.bind("model.mlp_layers", m.mlp_layers);
  b.bind("model.attention_dropout", m.attention_dropout);
  b.bind("model.dropout", m.dropout);
  b.bind("model.use_aux_channel", m.use_aux_channel);
  b.bind("model.column_attention", m.column_attention_enabled);
  b.bind("model.position_embedding", m.use_position_embedding);
  b.bind("model.head_uses_aux", m.head_uses_aux);
  b.bind("model.max_length", m.max_length);

  auto& t = c.train;
  b.bind("train.total_steps", t.total_steps);
  b.bind("train.warmup_steps", t.warmup_steps);
  b.bind("train.peak_lr", t.peak_lr);
  b.bind("train.min_lr_fraction", t.min_lr_fraction);
  b.bind("train.batch_size", t.batch_size);
  b.bind("train.weight_decay", t.weight_decay);
  b.bind("train.grad_clip_norm", t.grad_clip_norm);
  b.bind("train.adam_beta1", t.adam_beta1);
  b.bind("train.adam_beta2", t.adam_beta2);
  b.bind("train.adam_eps", t.adam_eps);
  b.bind("train.support_sizes", t.support_sizes);
  b.bind("train.n_query", t.n_query);
  b.bind("train.task_mix", t.task_mix);
  b.bind("train.exclude_wild_type", t.exclude_wild_type);
  b.bind("train.checkpoint_every", t.checkpoint_every);
  b.bind("train.log_every", t.log_every);

  bind_enum(b, "loss.kind", c.loss.kind, [](LossKind k) { return to_string(k); },
            [](const std::string& v) { return loss_kind_from_string(v); });
  b.bind("loss.normalize_by_pairs", c.loss.normalize_by_pairs);

  auto& ft = c.finetune;
  b.bind("finetune.steps", ft.steps);
  b.bind("finetune.lr", ft.lr);
  b.bind("finetune.skip_warmup", ft.skip_warmup);
  b.bind("finetune.warmup_steps", ft.warmup_steps);
  b.bind("finetune.min_lr_fraction", ft.min_lr_fraction);
  bind_enum(b, "finetune.optimizer", ft.optimizer, [](OptimizerKind k) { return to_string(k); },
            [](const std::string& v) { return optimizer_kind_from_string(v); });
  b.bind("finetune.weight_decay", ft.weight_decay);
  b.bind("finetune.grad_clip_norm", ft.grad_clip_norm);
  b.bind("finetune.subsample_query_size", ft.subsample_query_size);
  b.bind("finetune.subsample_support_size", ft.subsample_support_size);
  b.bind("finetune.allow_fallback", ft.allow_fallback);
  b.bind("finetune.early_stop_eval_every", ft.early_stop_eval_every);

  auto& p = c.protocol;
  b.bind("eval.shots", p.shots);
  b.bind("eval.query_chunk", p.query_chunk);
  b.bind("eval.early_stop_size", p.early_stop_size);
  b.bind("eval.max_points", p.max_points);
  b.bind("eval.support_resamples", p.support_resamples);
  b.bind("eval.per_chunk", p.per_chunk);
  b.bind("eval.exclude_wild_type", p.exclude_wild_type);
  b.bind("eval.restandardize_support", p.restandardize_support);

  auto& r = c.reptile;
  b.bind("reptile.inner_steps", r.inner_steps);
  b.bind("reptile.inner_batch", r.inner_batch);
  b.bind("reptile.inner_lr", r.inner_lr);
  bind_enum(b, "reptile.inner_optimizer", r.inner_optimizer, [](OptimizerKind k) { return to_string(k); },
            [](const std::string& v) { return optimizer_kind_from_string(v); });
  b.bind("reptile.inner_clip_norm", r.inner_clip_norm);
  bind_enum(b, "reptile.outer", r.outer, [](OuterUpdate k) { return to_string(k); },
            [](const std::string& v) { return outer_update_from_string(v); });
  b.bind("reptile.outer_lr", r.outer_lr);
  b.bind("reptile.meta_steps", r.meta_steps);
  b.bind("reptile.warmup_steps", r.warmup_steps);
  b.bind("reptile.min_lr_fraction", r.min_lr_fraction);
  b.bind("reptile.task_batch", r.task_batch);
  b.bind("reptile.support_size", r.support_size);
  b.bind("reptile.in_context", r.in_context);
  b.bind("reptile.finetune_steps", r.finetune_steps);
  b.bind("reptile.weight_decay", r.weight_decay);
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IOError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IOError("cannot write " + path.string());
  f << text;
  if (!f) throw IOError("failed writing " + path.string());
}

void echo_config(const fs::path& dir, const ExperimentConfig& config) {
  write_config_file(dir / "config.resolved.cfg", config.to_key_values());
}

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& values) {
  ExperimentConfig c;
  ConfigBinder b;
  bind_all(b, c);
  b.apply(values);
  if (c.method != "metalic" && c.method != "reptile") {
    throw InvalidConfig("method must be 'metalic' or 'reptile', got '" + c.method + "'");
  }
  if (c.seeds.empty()) throw InvalidConfig("seeds must not be empty");
  if (c.workers < 1) throw InvalidConfig("workers must be >= 1");
  for (const auto& a : c.ablations) ablation_from_string(a);
  validate(c.model);
  validate(c.train);
  validate(c.finetune);
  validate(c.protocol);
  if (c.method == "reptile") validate(c.reptile);
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) { return from_key_values(read_config_file(path)); }

KeyValues ExperimentConfig::to_key_values() const {
  ExperimentConfig copy = *this;
  ConfigBinder b;
  bind_all(b, copy);
  return b.dump();
}

ResolvedSettings resolve(const ExperimentConfig& config) {
  ResolvedSettings r;
  r.settings.model = config.model;
  r.settings.train = config.train;
  r.settings.finetune = config.finetune;
  r.settings.protocol = config.protocol;
  r.settings.loss = config.loss;
  r.settings.finetune.early_stop_set_size = config.protocol.early_stop_size;
  for (const auto& a : config.ablations) r.settings = build_ablation(ablation_from_string(a), r.settings);
  r.reptile = config.reptile;
  r.is_reptile = config.method == "reptile";
  if (r.is_reptile && !r.reptile.in_context) r.settings.model.column_attention_enabled = false;
  return r;
}

Alphabet experiment_alphabet(const ExperimentConfig& config) {
  return config.provider.alphabet.empty() ? Alphabet::amino_acids() : Alphabet(config.provider.alphabet);
}

EmbeddingProvider make_provider(const ExperimentConfig& config) {
  const Alphabet alphabet = experiment_alphabet(config);
  const ProviderKind kind = provider_kind_from_string(config.provider.kind);
  switch (kind) {
    case ProviderKind::onehot: return EmbeddingProvider::onehot(alphabet);
    case ProviderKind::learned_table:
      return EmbeddingProvider::learned_table(alphabet, config.provider.dim, config.provider.freeze);
    case ProviderKind::file_backed: {
      if (config.provider.table.empty()) throw InvalidConfig("file_backed provider needs provider.table");
      fs::path path = config.provider.table;
      if (path.is_relative()) {
        if (const char* cache = std::getenv("METALIC_LAB_CACHE")) path = fs::path(cache) / path;
      }
      auto table = std::make_shared<const EmbeddingTable>(load_embedding_table(path));
      return EmbeddingProvider::file_backed(std::move(table), alphabet);
    }
  }
  throw InvalidConfig("unknown provider kind");
}

TaskSplit generate_split(const ExperimentConfig& config, std::uint64_t seed) {
  const std::size_t total = config.n_train_tasks + config.n_test_tasks;
  auto tasks = make_task_family(config.family, total, derive_seed(seed, "tasks"));
  TaskSplit split;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    (i < config.n_train_tasks ? split.train : split.test).push_back(std::move(tasks[i]));
  }
  return split;
}

TaskSplit load_split(const ExperimentConfig& config) {
  if (config.tasks_dir.empty()) throw InvalidConfig("tasks_dir is not set");
  const fs::path dir = config.tasks_dir;
  const TaskRegistry registry = filter_by_length(load_registry(dir, experiment_alphabet(config)), config.model.max_length);
  std::vector<std::string> holdouts = config.holdouts;
  if (holdouts.empty()) {
    std::istringstream in(read_text(dir / "split.txt"));
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (!line.empty() && line[0] != '#') holdouts.push_back(line);
    }
  }
  SplitSpec spec;
  spec.holdout_task_names = holdouts;
  auto [train, test] = split_registry(registry.tasks(), spec);
  return TaskSplit{std::move(train), std::move(test)};
}

Checkpoint train_method(const ExperimentConfig& config, const TaskSplit& split, std::uint64_t seed,
                        const fs::path& checkpoint_root) {
  const ResolvedSettings r = resolve(config);
  const EmbeddingProvider provider = make_provider(config);
  const AxialRegressor model(r.settings.model, provider);

  Checkpoint ckpt;
  ExperimentConfig snapshot = config;
  snapshot.seeds = {static_cast<int>(seed)};
  ckpt.config = snapshot.to_key_values();

  TrainConfig train = r.settings.train;
  train.seed = seed;
  ReptileConfig reptile = r.reptile;
  reptile.seed = seed;

  if (!r.settings.meta_train) {
    ckpt.method = "init";
    ckpt.state = start_training(model, train);
  } else {
    ckpt.method = r.is_reptile ? "reptile" : "metalic";
    const fs::path latest = checkpoint_root.empty() ? fs::path() : checkpoint_root / "latest";
    if (config.resume && !latest.empty() && fs::exists(latest / "state.txt")) {
      Checkpoint previous = load_checkpoint(latest);
      if (!(previous.state.params.layout() == *model.layout())) {
        throw FormatError("checkpoint at " + latest.string() + " does not match the configured model");
      }
      ckpt.state = std::move(previous.state);
      ckpt.state.optimizer.set_config(r.is_reptile ? AdamConfig{0.9, 0.999, 1e-8, reptile.weight_decay} : train.adam());
      log::info("resuming from step ", ckpt.state.step);
    } else {
      ckpt.state = r.is_reptile ? start_reptile(model, reptile) : start_training(model, train);
    }
    CheckpointSink sink;
    if (!checkpoint_root.empty()) {
      sink = [&](const TrainState& state, std::string_view tag) {
        Checkpoint c{ckpt.method, ckpt.config, state};
        save_checkpoint(c, checkpoint_root / (tag == "periodic" ? std::string("latest") : std::string(tag)));
      };
    }
    if (r.is_reptile) {
      reptile_meta_train(model, split.train, reptile, r.settings.loss, ckpt.state, sink);
    } else {
      meta_train(model, split.train, train, r.settings.loss, ckpt.state, sink);
    }
  }
  if (!checkpoint_root.empty() && ckpt.method == "init") save_checkpoint(ckpt, checkpoint_root / "final");
  return ckpt;
}

AxialRegressor model_for_checkpoint(const Checkpoint& checkpoint) {
  const ExperimentConfig config = ExperimentConfig::from_key_values(checkpoint.config);
  AxialRegressor model(resolve(config).settings.model, make_provider(config));
  if (!(checkpoint.state.params.layout() == *model.layout())) {
    throw FormatError("checkpoint tensors do not match the model described by its config");
  }
  return model;
}

RunResult evaluate_method(const ExperimentConfig& config, const AxialRegressor& model, const ParamSet<float>& params,
                          const std::vector<FitnessTask>& tasks, std::uint64_t seed) {
  const ResolvedSettings r = resolve(config);
  const FinetuneConfig ft =
      r.is_reptile ? reptile_finetune_config(r.reptile, r.settings.finetune) : r.settings.finetune;
  const std::uint64_t eval_seed = derive_seed(seed, "eval");

  std::vector<std::map<int, std::vector<ResampleResult>>> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        for (int shot : r.settings.protocol.shots) {
          results[i][shot] =
              evaluate_task(model, params, tasks[i], shot, r.settings.protocol, ft, r.settings.loss, eval_seed);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(config.workers, static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  RunResult run;
  run.seed = seed;
  for (std::size_t i = 0; i < tasks.size(); ++i) run.tasks[tasks[i].name] = std::move(results[i]);
  return run;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw IOError("output directory " + dir.string() + " exists and is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path cmd_gen_tasks(const ExperimentConfig& config, bool force) {
  const fs::path dir = config.tasks_dir.empty() ? fs::path(config.out_dir) / "tasks" : fs::path(config.tasks_dir);
  prepare_out_dir(dir, force);
  echo_config(dir, config);
  const TaskSplit split = generate_split(config, static_cast<std::uint64_t>(config.seeds.front()));
  for (const auto& t : split.train) write_task_csv(t, dir / (t.name + ".csv"));
  std::string manifest = "# held-out tasks\n";
  for (const auto& t : split.test) {
    write_task_csv(t, dir / (t.name + ".csv"));
    manifest += t.name + "\n";
  }
  write_text(dir / "split.txt", manifest);
  log::info("wrote ", split.train.size(), " train and ", split.test.size(), " held-out tasks to ", dir.string());
  return dir;
}

std::vector<fs::path> cmd_meta_train(const ExperimentConfig& config, bool force) {
  const fs::path out = config.out_dir;
  if (!config.resume) prepare_out_dir(out, force);
  else fs::create_directories(out);
  echo_config(out, config);
  std::vector<fs::path> finals;
  for (int seed : config.seeds) {
    const auto s = static_cast<std::uint64_t>(seed);
    const TaskSplit split = config.tasks_dir.empty() ? generate_split(config, s) : load_split(config);
    const fs::path root = out / "checkpoints" / ("seed_" + std::to_string(seed));
    const Checkpoint ckpt = train_method(config, split, s, root);
    const Checkpoint check = load_checkpoint(root / "final");
    if (!(check.state.params == ckpt.state.params)) {
      throw IOError("checkpoint written to " + (root / "final").string() + " does not read back identically");
    }
    finals.push_back(root / "final");
  }
  return finals;
}

fs::path cmd_finetune_eval(const ExperimentConfig& config, const std::vector<fs::path>& checkpoints, bool force) {
  if (checkpoints.empty()) throw InvalidConfig("finetune-eval needs at least one checkpoint");
  const fs::path out = config.out_dir;
  prepare_out_dir(out / "eval", force);
  echo_config(out / "eval", config);
  std::vector<RunResult> runs;
  std::uint64_t counter = 0;
  std::string ids;
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const auto seed = static_cast<std::uint64_t>(config.seeds[i]);
    const fs::path path = checkpoints[std::min(i, checkpoints.size() - 1)];
    const Checkpoint ckpt = load_checkpoint(path);
    const AxialRegressor model = model_for_checkpoint(ckpt);
    const TaskSplit split = config.tasks_dir.empty() ? generate_split(config, seed) : load_split(config);
    runs.push_back(evaluate_method(config, model, ckpt.state.params, split.test, seed));
    counter = std::max(counter, ckpt.state.gradient_computations);
    ids += (ids.empty() ? "" : ",") + path.string();
  }
  EvalReport report = aggregate(std::move(runs));
  report.method = config.name;
  report.checkpoint_id = ids;
  report.ablations = config.ablations;
  report.gradient_computations = counter;
  report.config = config.to_key_values();
  const fs::path path = out / "eval" / "report.json";
  write_text(path, to_json(report));
  report_from_json(read_text(path));  // validate what was written
  return path;
}

std::string comparison_table(const std::vector<EvalReport>& reports) {
  std::set<int> shots;
  for (const auto& r : reports) {
    for (const auto& [shot, s] : r.summary) shots.insert(shot);
  }
  std::ostringstream os;
  os << std::left << std::setw(24) << "method";
  for (int shot : shots) os << std::setw(18) << ("shot " + std::to_string(shot));
  os << "gradient_computations\n";
  for (const auto& r : reports) {
    os << std::setw(24) << r.method;
    for (int shot : shots) {
      const auto it = r.summary.find(shot);
      std::ostringstream cell;
      if (it == r.summary.end()) {
        cell << "-";
      } else {
        cell << std::fixed << std::setprecision(3) << it->second.mean << " +- " << it->second.std;
      }
      os << std::setw(18) << cell.str();
    }
    os << r.gradient_computations << "\n";
  }
  return os.str();
}

fs::path cmd_compare(const std::vector<fs::path>& inputs, const fs::path& out_dir, bool force, int workers) {
  if (inputs.empty()) throw InvalidConfig("compare needs at least one config or report");
  prepare_out_dir(out_dir, force);
  std::string echo;
  for (const auto& p : inputs) echo += "input = " + p.string() + "\n";
  write_text(out_dir / "compare.cfg", echo);
  std::vector<EvalReport> reports;
  for (const auto& input : inputs) {
    if (input.extension() == ".json") {
      reports.push_back(report_from_json(read_text(input)));
      continue;
    }
    ExperimentConfig config = ExperimentConfig::load(input);
    config.out_dir = (out_dir / config.name).string();
    config.workers = workers;
    const auto checkpoints = cmd_meta_train(config, true);
    reports.push_back(report_from_json(read_text(cmd_finetune_eval(config, checkpoints, true))));
  }
  const fs::path table = out_dir / "comparison.txt";
  write_text(table, comparison_table(reports));
  return table;
}

void write_attention_dump(const fs::path& path, const AttentionMap& map) {
  const auto avg = map.head_average();
  std::ostringstream os;
  os << map.layers << ' ' << map.rows << '\n';
  os << std::setprecision(9);
  for (int l = 0; l < map.layers; ++l) {
    for (int i = 0; i < map.rows; ++i) {
      for (int j = 0; j < map.rows; ++j) {
        os << (j ? " " : "") << avg[(static_cast<std::size_t>(l) * map.rows + i) * map.rows + j];
      }
      os << '\n';
    }
  }
  write_text(path, os.str());
}

AttentionMap read_attention_dump(const fs::path& path) {
  std::istringstream in(read_text(path));
  AttentionMap map;
  map.heads = 1;
  if (!(in >> map.layers >> map.rows) || map.layers <= 0 || map.rows <= 0) {
    throw FormatError("attention dump " + path.string() + " lacks a 'layers rows' header");
  }
  map.weights.resize(static_cast<std::size_t>(map.layers) * map.rows * map.rows);
  for (auto& w : map.weights) {
    if (!(in >> w)) throw FormatError("attention dump " + path.string() + " is truncated");
  }
  return map;
}

fs::path cmd_attn_dump(const ExperimentConfig& config, const fs::path& checkpoint, const std::string& task_name,
                       int shot, bool force) {
  const fs::path out = config.out_dir;
  prepare_out_dir(out / "attention", force);
  echo_config(out / "attention", config);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const AxialRegressor model = model_for_checkpoint(ckpt);
  const auto seed = static_cast<std::uint64_t>(config.seeds.front());
  const TaskSplit split = config.tasks_dir.empty() ? generate_split(config, seed) : load_split(config);
  const FitnessTask* task = nullptr;
  for (const auto* group : {&split.test, &split.train}) {
    for (const auto& t : *group) {
      if (t.name == task_name) task = &t;
    }
  }
  if (task == nullptr) throw UnknownTask("no task named '" + task_name + "'");

  Rng rng(derive_seed(seed, "attention", static_cast<std::uint64_t>(shot)));
  SamplingOptions options;
  options.exclude_wild_type = config.protocol.exclude_wild_type;
  const std::size_t pool = sampling_pool(*task, options).size();
  if (pool < static_cast<std::size_t>(shot) + 2) throw TaskTooSmall("task too small for the requested shot");
  const std::size_t n_query = std::min<std::size_t>(config.protocol.query_chunk, pool - shot);
  const ContextBatch context = sample_context(*task, static_cast<std::size_t>(shot), n_query, rng, options);
  const auto grid = model.assemble(context, ckpt.state.params);
  ForwardOptions fo;
  fo.capture_attention = true;
  const auto pass = model.forward(ckpt.state.params, grid, fo);
  const fs::path path = out / "attention" / (task_name + "_shot" + std::to_string(shot) + ".txt");
  write_attention_dump(path, *pass.attention);
  const AttentionMap back = read_attention_dump(path);
  for (int l = 0; l < back.layers; ++l) {
    for (int i = 0; i < back.rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < back.rows; ++j) sum += back.at(l, 0, i, j);
      if (std::abs(sum - 1.0) > 1e-5) throw FormatError("attention row does not sum to one");
    }
  }
  return path;
}

}  // namespace metalic
