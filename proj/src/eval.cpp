#include "metalic/eval.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <json.hpp>

namespace metalic {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

Correlation spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch("spearman inputs differ in length");
  if (a.size() < 2) throw InsufficientData("spearman needs at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;  // ranks always average to (n+1)/2
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

std::vector<double> score_points(const AxialRegressor& model, const ParamSet<float>& params,
                                 std::span<const Record> support, std::span<const Record> points, int chunk) {
  std::vector<double> out;
  out.reserve(points.size());
  const std::size_t step = chunk > 0 ? static_cast<std::size_t>(chunk) : std::max<std::size_t>(points.size(), 1);
  std::vector<Example> query;
  for (std::size_t begin = 0; begin < points.size(); begin += step) {
    const std::size_t end = std::min(points.size(), begin + step);
    query.clear();
    for (std::size_t i = begin; i < end; ++i) query.push_back(Example{points[i].sequence, points[i].aux_score});
    const auto scores = model.predict<float>(params, support, query);
    out.insert(out.end(), scores.begin(), scores.end());
  }
  return out;
}

void validate(const EvalProtocol& p) {
  if (p.shots.empty()) throw InvalidConfig("protocol needs at least one shot");
  for (int s : p.shots) {
    if (s < 0) throw InvalidConfig("shots must be >= 0");
  }
  if (p.query_chunk < 2 || p.early_stop_size < 0 || p.max_points < p.query_chunk || p.support_resamples < 1) {
    throw InvalidConfig("protocol sizes invalid (query_chunk >= 2, max_points >= query_chunk, resamples >= 1)");
  }
  if (p.seeds.empty()) throw InvalidConfig("protocol needs at least one seed");
}

PointAccounting plan_points(std::size_t pool, int shot, const EvalProtocol& protocol) {
  PointAccounting a;
  a.pool = pool;
  a.shot = static_cast<std::size_t>(shot);
  a.early_stop = static_cast<std::size_t>(protocol.early_stop_size);
  const std::size_t reserved = a.shot + a.early_stop;
  const auto chunk = static_cast<std::size_t>(protocol.query_chunk);
  if (pool < reserved + chunk) {
    throw TaskTooSmall("task of " + std::to_string(pool) + " points cannot hold shot " + std::to_string(shot) +
                       " + early stop " + std::to_string(a.early_stop) + " + one chunk of " + std::to_string(chunk));
  }
  const std::size_t remaining = pool - reserved;
  const std::size_t capped = std::min(remaining, static_cast<std::size_t>(protocol.max_points));
  a.chunks = capped / chunk;
  a.scored = a.chunks * chunk;
  a.dropped = capped - a.scored;
  a.unused = remaining - capped;
  a.context_support = a.shot;
  return a;
}

namespace {

void restandardize(std::vector<Record>& support) {
  if (support.empty()) return;
  double mean = 0.0;
  for (const auto& r : support) mean += r.fitness;
  mean /= static_cast<double>(support.size());
  double var = 0.0;
  for (const auto& r : support) var += (r.fitness - mean) * (r.fitness - mean);
  var /= static_cast<double>(support.size());
  const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  for (auto& r : support) r.fitness = (r.fitness - mean) * scale;
}

std::vector<Record> gather(const FitnessTask& task, const std::vector<std::size_t>& order, std::size_t begin,
                           std::size_t count) {
  std::vector<Record> out;
  out.reserve(count);
  for (std::size_t i = begin; i < begin + count; ++i) out.push_back(task.records[order[i]]);
  return out;
}

}  // namespace

std::vector<ResampleResult> run_protocol(const FitnessTask& task, int shot, const EvalProtocol& protocol,
                                         std::uint64_t seed, const Adapter& adapter) {
  validate(protocol);
  SamplingOptions options;
  options.exclude_wild_type = protocol.exclude_wild_type;
  const auto pool = sampling_pool(task, options);
  const PointAccounting plan = plan_points(pool.size(), shot, protocol);
  const auto chunk = static_cast<std::size_t>(protocol.query_chunk);

  std::vector<ResampleResult> results;
  for (int r = 0; r < protocol.support_resamples; ++r) {
    Rng rng(derive_seed(seed, task.name, static_cast<std::uint64_t>(r)));
    std::vector<std::size_t> order = pool;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Record> early = gather(task, order, 0, plan.early_stop);
    std::vector<Record> support = gather(task, order, plan.early_stop, plan.shot);
    const std::vector<Record> scored = gather(task, order, plan.early_stop + plan.shot, plan.scored);

    ResampleResult res;
    res.resample = r;
    res.accounting = plan;
    if (protocol.merge_early_stop_into_support && shot > 0) {
      support.insert(support.end(), early.begin(), early.end());
      early.clear();
    }
    res.accounting.context_support = support.size();
    if (protocol.restandardize_support) restandardize(support);

    const Adapted adapted = adapter(support, early, rng);
    res.best_step = adapted.best_step;
    res.gradient_computations = adapted.gradient_computations;

    std::vector<double> scores;
    std::vector<double> labels;
    scores.reserve(scored.size());
    labels.reserve(scored.size());
    for (std::size_t c = 0; c < plan.chunks; ++c) {
      const std::span<const Record> q(scored.data() + c * chunk, chunk);
      const auto s = adapted.score(support, q);
      if (s.size() != chunk) throw LengthMismatch("predictor returned the wrong number of scores");
      std::vector<double> y;
      for (const auto& rec : q) y.push_back(rec.fitness);
      const Correlation cc = spearman(s, y);
      res.chunk_rhos.push_back(cc.rho);
      res.chunk_degenerate.push_back(cc.degenerate);
      scores.insert(scores.end(), s.begin(), s.end());
      labels.insert(labels.end(), y.begin(), y.end());
    }
    if (protocol.per_chunk) {
      res.rho = std::accumulate(res.chunk_rhos.begin(), res.chunk_rhos.end(), 0.0) /
                static_cast<double>(res.chunk_rhos.size());
      res.degenerate = std::any_of(res.chunk_degenerate.begin(), res.chunk_degenerate.end(), [](bool b) { return b; });
    } else {
      const Correlation all = spearman(scores, labels);
      res.rho = all.rho;
      res.degenerate = all.degenerate;
    }
    results.push_back(std::move(res));
  }
  return results;
}

Adapter model_adapter(const AxialRegressor& model, const ParamSet<float>& params, const FinetuneConfig& finetune_config,
                      const LossConfig& loss, bool finetune_enabled) {
  return [&model, &params, finetune_config, loss, finetune_enabled](std::span<const Record> support,
                                                                   std::span<const Record> early_stop, Rng& rng) {
    Adapted out;
    std::shared_ptr<const ParamSet<float>> tuned;
    if (finetune_enabled && !support.empty() && finetune_config.steps > 0) {
      FinetuneResult ft = finetune(model, params, support, early_stop, finetune_config, loss, rng);
      out.best_step = ft.best_step;
      out.gradient_computations = ft.gradient_computations;
      tuned = std::make_shared<const ParamSet<float>>(std::move(ft.params));
    }
    const ParamSet<float>* base = &params;
    out.score = [&model, base, tuned](std::span<const Record> s, std::span<const Record> q) {
      return score_points(model, tuned ? *tuned : *base, s, q);
    };
    return out;
  };
}

Adapter oracle_adapter() {
  return [](std::span<const Record>, std::span<const Record>, Rng&) {
    Adapted out;
    out.score = [](std::span<const Record>, std::span<const Record> q) {
      std::vector<double> s;
      for (const auto& r : q) s.push_back(r.fitness);
      return s;
    };
    return out;
  };
}

std::vector<ResampleResult> evaluate_task(const AxialRegressor& model, const ParamSet<float>& params,
                                          const FitnessTask& task, int shot, const EvalProtocol& protocol,
                                          const FinetuneConfig& finetune, const LossConfig& loss, std::uint64_t seed) {
  return run_protocol(task, shot, protocol, seed, model_adapter(model, params, finetune, loss, protocol.finetune));
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::NoICL: return "NoICL";
    case Ablation::NoFT: return "NoFT";
    case Ablation::NoPref: return "NoPref";
    case Ablation::NoMetaTrain: return "NoMetaTrain";
    case Ablation::NoAug: return "NoAug";
    case Ablation::AuxChannel: return "AuxChannel";
  }
  return "none";
}

Ablation ablation_from_string(std::string_view name) {
  for (Ablation a : {Ablation::none, Ablation::NoICL, Ablation::NoFT, Ablation::NoPref, Ablation::NoMetaTrain,
                     Ablation::NoAug, Ablation::AuxChannel}) {
    if (to_string(a) == name) return a;
  }
  throw UnknownAblation("unknown ablation '" + std::string(name) +
                        "' (expected none, NoICL, NoFT, NoPref, NoMetaTrain, NoAug, AuxChannel)");
}

MethodSettings build_ablation(Ablation ablation, MethodSettings s) {
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::NoICL: s.model.column_attention_enabled = false; break;
    case Ablation::NoFT:
      s.protocol.finetune = false;
      s.protocol.merge_early_stop_into_support = true;
      break;
    case Ablation::NoPref: s.loss.kind = LossKind::mse; break;
    case Ablation::NoMetaTrain: s.meta_train = false; break;
    case Ablation::NoAug: s.train.task_mix = "single_mutant:1"; break;
    case Ablation::AuxChannel: s.model.use_aux_channel = true; break;
  }
  return s;
}

double task_mean(const std::vector<ResampleResult>& resamples) {
  if (resamples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : resamples) total += r.rho;
  return total / static_cast<double>(resamples.size());
}

EvalReport aggregate(std::vector<RunResult> runs) {
  if (runs.empty()) throw InsufficientData("aggregate needs at least one run");
  EvalReport report;
  std::map<int, std::vector<double>> per_seed;
  for (const auto& run : runs) {
    std::map<int, std::pair<double, std::size_t>> sums;
    for (const auto& [task, shots] : run.tasks) {
      for (const auto& [shot, resamples] : shots) {
        auto& [sum, count] = sums[shot];
        sum += task_mean(resamples);
        ++count;
        for (const auto& r : resamples) report.summary[shot].degenerate += r.degenerate ? 1 : 0;
      }
    }
    for (const auto& [shot, sc] : sums) per_seed[shot].push_back(sc.first / static_cast<double>(sc.second));
  }
  for (auto& [shot, values] : per_seed) {
    auto& s = report.summary[shot];
    s.per_seed = values;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    s.mean = mean;
    s.std = std::sqrt(var / static_cast<double>(values.size()));
  }
  report.runs = std::move(runs);
  return report;
}

namespace {

using nlohmann::json;

json accounting_json(const PointAccounting& a) {
  return json{{"pool", a.pool},         {"shot", a.shot},       {"early_stop", a.early_stop},
              {"chunks", a.chunks},     {"scored", a.scored},   {"dropped", a.dropped},
              {"unused", a.unused},     {"context_support", a.context_support}};
}

PointAccounting accounting_from(const json& j) {
  PointAccounting a;
  a.pool = j.at("pool");
  a.shot = j.at("shot");
  a.early_stop = j.at("early_stop");
  a.chunks = j.at("chunks");
  a.scored = j.at("scored");
  a.dropped = j.at("dropped");
  a.unused = j.at("unused");
  a.context_support = j.at("context_support");
  return a;
}

}  // namespace

std::string to_json(const EvalReport& report) {
  json j;
  j["method"] = report.method;
  j["checkpoint_id"] = report.checkpoint_id;
  j["ablations"] = report.ablations;
  j["gradient_computations"] = report.gradient_computations;
  j["config"] = report.config;
  json runs = json::array();
  for (const auto& run : report.runs) {
    json tasks = json::object();
    for (const auto& [task, shots] : run.tasks) {
      json per_shot = json::object();
      for (const auto& [shot, resamples] : shots) {
        json list = json::array();
        for (const auto& r : resamples) {
          list.push_back(json{{"resample", r.resample},
                              {"rho", r.rho},
                              {"degenerate", r.degenerate},
                              {"chunk_rhos", r.chunk_rhos},
                              {"chunk_degenerate", r.chunk_degenerate},
                              {"best_step", r.best_step},
                              {"gradient_computations", r.gradient_computations},
                              {"accounting", accounting_json(r.accounting)}});
        }
        per_shot[std::to_string(shot)] = list;
      }
      tasks[task] = per_shot;
    }
    runs.push_back(json{{"seed", run.seed}, {"tasks", tasks}});
  }
  j["runs"] = runs;
  json summary = json::object();
  for (const auto& [shot, s] : report.summary) {
    summary[std::to_string(shot)] =
        json{{"per_seed", s.per_seed}, {"mean", s.mean}, {"std", s.std}, {"degenerate", s.degenerate}};
  }
  j["summary"] = summary;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport report;
  try {
    const json j = json::parse(text);
    report.method = j.at("method");
    report.checkpoint_id = j.at("checkpoint_id");
    report.ablations = j.at("ablations").get<std::vector<std::string>>();
    report.gradient_computations = j.at("gradient_computations");
    report.config = j.at("config").get<KeyValues>();
    for (const auto& jr : j.at("runs")) {
      RunResult run;
      run.seed = jr.at("seed");
      for (const auto& [task, per_shot] : jr.at("tasks").items()) {
        for (const auto& [shot, list] : per_shot.items()) {
          auto& out = run.tasks[task][std::stoi(shot)];
          for (const auto& r : list) {
            ResampleResult rr;
            rr.resample = r.at("resample");
            rr.rho = r.at("rho");
            rr.degenerate = r.at("degenerate");
            rr.chunk_rhos = r.at("chunk_rhos").get<std::vector<double>>();
            rr.chunk_degenerate = r.at("chunk_degenerate").get<std::vector<bool>>();
            rr.best_step = r.at("best_step");
            rr.gradient_computations = r.at("gradient_computations");
            rr.accounting = accounting_from(r.at("accounting"));
            out.push_back(std::move(rr));
          }
        }
      }
      report.runs.push_back(std::move(run));
    }
    for (const auto& [shot, s] : j.at("summary").items()) {
      auto& out = report.summary[std::stoi(shot)];
      out.per_seed = s.at("per_seed").get<std::vector<double>>();
      out.mean = s.at("mean");
      out.std = s.at("std");
      out.degenerate = s.at("degenerate");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
  return report;
}

}  // namespace metalic
