// metalic_lab: task generation, meta-training, evaluation and analysis.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "metalic/config.hpp"
#include "metalic/errors.hpp"
#include "metalic/experiment.hpp"
#include "metalic/log.hpp"

namespace fs = std::filesystem;
using namespace metalic;

namespace {

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  std::string ablations;
  std::string shots;
  std::vector<std::string> overrides;
  int workers = 0;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config file");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seeds, "seed or comma-separated seeds (overrides `seeds`)");
  cmd->add_option("--out", c.out, "output directory (overrides `out_dir`)");
  cmd->add_option("--ablation", c.ablations, "comma-separated ablations (overrides `ablations`)");
  cmd->add_option("--shots", c.shots, "comma-separated evaluation shots (overrides `eval.shots`)");
  cmd->add_option("--workers", c.workers, "evaluation threads")->check(CLI::PositiveNumber);
  cmd->add_option("--set", c.overrides, "extra `key=value` override, repeatable");
  cmd->add_flag("--force", c.force, "overwrite a non-empty output directory");
}

ExperimentConfig load_config(const Common& c) {
  KeyValues values = read_config_file(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidConfig("--set expects key=value, got '" + o + "'");
    values[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  if (!c.seeds.empty()) values["seeds"] = c.seeds;
  if (!c.out.empty()) values["out_dir"] = c.out;
  if (!c.ablations.empty()) values["ablations"] = c.ablations == "none" ? "" : c.ablations;
  if (!c.shots.empty()) values["eval.shots"] = c.shots;
  if (c.workers > 0) values["workers"] = std::to_string(c.workers);
  return ExperimentConfig::from_key_values(values);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metalic in-context meta-learning lab"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "suppress progress logging");

  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-tasks", "write a synthetic task family and its held-out split");
  add_common(gen_cmd, gen);

  Common train;
  auto* train_cmd = app.add_subcommand("meta-train", "meta-train one checkpoint per seed");
  add_common(train_cmd, train);

  Common eval;
  std::vector<std::string> eval_checkpoints;
  auto* eval_cmd = app.add_subcommand("finetune-eval", "evaluate checkpoints on the held-out tasks");
  add_common(eval_cmd, eval);
  eval_cmd->add_option("--checkpoint", eval_checkpoints, "checkpoint directory per seed (one is reused for all)")
      ->required();

  Common cmp;
  std::vector<std::string> cmp_inputs;
  auto* cmp_cmd = app.add_subcommand("compare", "train and evaluate configs (or read reports) into one table");
  cmp_cmd->add_option("inputs", cmp_inputs, "experiment configs or report.json files")->required();
  cmp_cmd->add_option("--out", cmp.out, "output directory")->required();
  cmp_cmd->add_option("--workers", cmp.workers, "evaluation threads")->check(CLI::PositiveNumber);
  cmp_cmd->add_flag("--force", cmp.force, "overwrite a non-empty output directory");

  Common attn;
  std::string attn_checkpoint;
  std::string attn_task;
  int attn_shot = 0;
  auto* attn_cmd = app.add_subcommand("attn-dump", "dump head-averaged column attention of one context");
  add_common(attn_cmd, attn);
  attn_cmd->add_option("--checkpoint", attn_checkpoint, "checkpoint directory")->required();
  attn_cmd->add_option("--task", attn_task, "task name")->required();
  attn_cmd->add_option("--shot", attn_shot, "support rows in context")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);
  log::set_level(quiet ? log::Level::quiet : verbose ? log::Level::debug : log::Level::info);

  try {
    if (*gen_cmd) {
      std::cout << cmd_gen_tasks(load_config(gen), gen.force).string() << "\n";
    } else if (*train_cmd) {
      for (const auto& p : cmd_meta_train(load_config(train), train.force)) std::cout << p.string() << "\n";
    } else if (*eval_cmd) {
      const std::vector<fs::path> checkpoints(eval_checkpoints.begin(), eval_checkpoints.end());
      std::cout << cmd_finetune_eval(load_config(eval), checkpoints, eval.force).string() << "\n";
    } else if (*cmp_cmd) {
      const std::vector<fs::path> inputs(cmp_inputs.begin(), cmp_inputs.end());
      const fs::path table = cmd_compare(inputs, cmp.out, cmp.force, cmp.workers > 0 ? cmp.workers : 1);
      std::cout << table.string() << "\n";
    } else if (*attn_cmd) {
      std::cout << cmd_attn_dump(load_config(attn), attn_checkpoint, attn_task, attn_shot, attn.force).string()
                << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "metalic_lab: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "metalic_lab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
