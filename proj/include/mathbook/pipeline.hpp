#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mathbook/config.hpp"
#include "mathbook/curriculum.hpp"
#include "mathbook/error.hpp"
#include "mathbook/eval.hpp"
#include "mathbook/grpo.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/knowledge_store.hpp"
#include "mathbook/policy.hpp"
#include "mathbook/problem_corpus.hpp"
#include "mathbook/reward.hpp"
#include "mathbook/rng.hpp"

namespace mathbook {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Content hash over the corpus in its stored order.
inline std::string corpus_hash(const Corpus& corpus) {
  std::uint64_t h = fnv1a("");
  for (const auto& p : corpus.problems()) h = fnv1a(to_json(p).dump() + "\n", h);
  for (const auto& g : corpus.groups()) h = fnv1a(to_json(g).dump() + "\n", h);
  for (const auto& l : corpus.lattices()) h = fnv1a(to_json(l).dump() + "\n", h);
  return hex64(h);
}

struct LineageEntry {
  std::string stage;
  std::string checkpoint;
  std::string parent;
};

struct RunManifest {
  std::string config_hash;
  std::string corpus_hash;
  std::vector<LineageEntry> lineage;
  std::map<std::string, json> stages;  // stage name -> summary

  json to_json() const {
    json lin = json::array();
    for (const auto& e : lineage) lin.push_back({{"stage", e.stage}, {"checkpoint", e.checkpoint}, {"parent", e.parent}});
    json st = json::object();
    for (const auto& [k, v] : stages) st[k] = v;
    return {{"config_hash", config_hash}, {"corpus_hash", corpus_hash}, {"lineage", lin}, {"stages", st}};
  }
};

inline PolicyShape policy_shape(const RunConfig& cfg) {
  return {token::first_symbol + cfg.task.symbols, cfg.task.feature_dim, cfg.policy.embed, cfg.policy.hidden,
          cfg.policy.positions};
}

inline TaskSpace task_space(const RunConfig& cfg) {
  return {cfg.task.symbols, cfg.task.feature_dim, cfg.task.base_steps, cfg.task.visual_noise,
          cfg.task.context_distractors};
}

inline TrainStageConfig rl_stage_config(const RunConfig& cfg) {
  TrainStageConfig s;
  s.grpo.epsilon = cfg.rl.epsilon;
  s.grpo.beta = cfg.rl.beta;
  s.grpo.group_size = cfg.rl.group_size;
  s.grpo.learning_rate = cfg.rl.lr;
  s.grpo.advantage_epsilon = cfg.rl.advantage_epsilon;
  s.grpo.kl_estimator = parse_kl_estimator(cfg.rl.kl_estimator);
  s.sampling.group_size = cfg.rl.group_size;
  s.sampling.temperature = cfg.rl.temperature;
  s.sampling.max_len = cfg.rl.max_len;
  s.reward.correct_value = cfg.rl.reward_correct;
  s.reward.format_value = cfg.rl.reward_format;
  if (cfg.rl.reward_mode == "additive") {
    s.reward.mode = RewardMode::additive;
  } else if (cfg.rl.reward_mode != "piecewise") {
    throw ValidationError("config: rl.reward.mode must be piecewise or additive");
  }
  s.aggregation = parse_aggregation(cfg.pre.aggregation);
  s.optimizer.kind = parse_optimizer(cfg.rl.optimizer);
  s.optimizer.learning_rate = cfg.rl.lr;
  s.updates_per_batch = cfg.rl.updates_per_batch;
  s.eval_rollouts = cfg.rl.eval_rollouts;
  s.checkpoint_every = cfg.pre.checkpoint_every;
  return s;
}

/// Linear warmup over the first `warmup` steps, then linear decay.
inline double warmup_decay(int step, int total, int warmup) {
  if (warmup > 0 && step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  const int rest = total - warmup;
  return rest <= 0 ? 1.0 : static_cast<double>(total - step) / static_cast<double>(rest);
}

namespace pipeline_detail {

struct Context {
  const RunConfig& cfg;
  const Corpus& corpus;
  const ToyPolicy& policy;
  std::map<std::string, SyntheticTask> tasks;
  std::filesystem::path out;

  const SyntheticTask& task(const std::string& id) const { return tasks.at(id); }
};

struct SftResult {
  int steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

inline SftResult run_sft(const Context& ctx, PolicyParams& params, const std::vector<std::string>& ids, int epochs,
                         Optimizer& opt, std::uint64_t seed, JsonLinesWriter* log, int step_offset = 0) {
  const auto bs = static_cast<std::size_t>(ctx.cfg.sft.batch_size);
  const int per_epoch = static_cast<int>((ids.size() + bs - 1) / bs);
  const int total = epochs * per_epoch;
  const int warmup = static_cast<int>(std::ceil(ctx.cfg.sft.warmup_ratio * total));
  std::vector<Completion> targets;
  for (const auto& id : ids) targets.push_back(ctx.policy.encode_target(ctx.task(id).correct_answer));
  SftResult r;
  int step = 0;
  for (int e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < order.size(); b += bs, ++step) {
      std::vector<SftPair> pairs;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
        pairs.push_back({&ctx.task(ids[order[k]]), targets[order[k]]});
      }
      const auto lg = sft_loss(ctx.policy, params, pairs);
      if (!std::isfinite(lg.loss)) throw RuntimeAbort("non-finite SFT loss at step " + std::to_string(step));
      const double scale = warmup_decay(step, total, warmup);
      opt.step(params, lg.grad, scale);
      if (step == 0) r.first_loss = lg.loss;
      r.last_loss = lg.loss;
      if (log != nullptr) {
        log->write({{"step", step_offset + step}, {"loss", lg.loss}, {"lr", opt.config().learning_rate * scale}});
      }
    }
  }
  r.steps = step;
  return r;
}

inline void save_checkpoint(const Context& ctx, const std::filesystem::path& path, const PolicyParams& params) {
  write_text_file(path, ctx.policy.checkpoint(params).dump() + "\n");
}

}  // namespace pipeline_detail

/// Runs sft -> pre -> dyn over `corpus`, writing every artefact under
/// cfg.output_dir. Stage aborts are rethrown with the stage name and the
/// last checkpoint written.
inline RunManifest run_pipeline(const RunConfig& cfg, const Corpus& corpus) {
  using namespace pipeline_detail;
  namespace fs = std::filesystem;
  cfg.validate();
  const auto skipped = cfg.skipped_stages();
  const bool run_sft_stage = skipped.count("sft") == 0;
  const bool run_pre = skipped.count("pre") == 0;
  const bool run_dyn = skipped.count("dyn") == 0;
  if (!run_sft_stage && cfg.init_checkpoint.empty() && (run_pre || run_dyn)) {
    throw ValidationError(run_pre ? "pre-aligned stage requires initial checkpoint"
                                  : "dynamic stage requires initial checkpoint");
  }
  const TrainStageConfig rl = rl_stage_config(cfg);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const std::string resolved = serialize_config(cfg);
  write_text_file(out / "config.resolved.toml", resolved);
  if (serialize_config(parse_config(read_text_file(out / "config.resolved.toml"))) != resolved) {
    throw RuntimeAbort("resolved config does not read back identically");
  }

  const ToyPolicy policy(policy_shape(cfg));
  const TaskSpace space = task_space(cfg);
  Context ctx{cfg, corpus, policy, {}, out};
  for (const auto& p : corpus.problems()) ctx.tasks.emplace(p.id, problem_task(p, space));

  RunManifest manifest;
  manifest.config_hash = hex64(fnv1a(resolved));
  manifest.corpus_hash = corpus_hash(corpus);

  PolicyParams params;
  std::string last_checkpoint;
  if (!cfg.init_checkpoint.empty()) {
    params = policy.restore(read_json_file(cfg.init_checkpoint));
    last_checkpoint = cfg.init_checkpoint;
  } else {
    params = policy.init_params(derive_seed(cfg.seed, "init"), cfg.policy.init_scale);
    last_checkpoint = "init:" + std::to_string(cfg.seed);
  }
  manifest.lineage.push_back({"init", last_checkpoint, ""});

  const auto guarded = [&](const std::string& stage, auto&& body) {
    try {
      body();
    } catch (const RuntimeAbort& e) {
      throw RuntimeAbort("stage " + stage + " aborted: " + e.what() + " (last checkpoint: " + last_checkpoint + ")");
    }
  };
  const auto finish_stage = [&](const std::string& stage, json summary) {
    const fs::path ckpt = out / "checkpoints" / (stage + ".json");
    save_checkpoint(ctx, ckpt, params);
    manifest.lineage.push_back({stage, ckpt.generic_string(), last_checkpoint});
    last_checkpoint = ckpt.generic_string();
    summary["checkpoint"] = last_checkpoint;
    summary["param_version"] = params.version;
    manifest.stages[stage] = std::move(summary);
  };

  if (run_sft_stage) {
    guarded("sft", [&] {
      std::vector<std::string> ids;
      for (const auto* p : corpus.standard_problems()) {
        if (ids.size() >= static_cast<std::size_t>(cfg.sft.size)) break;
        ids.push_back(p->id);
      }
      if (ids.empty()) throw ValidationError("sft stage: corpus has no standard problems");
      Optimizer opt({parse_optimizer(cfg.sft.optimizer), cfg.sft.lr});
      JsonLinesWriter log;
      log.open(out / "sft_metrics.jsonl");
      const auto r = run_sft(ctx, params, ids, cfg.sft.epochs, opt, derive_seed(cfg.seed, "sft"), &log);
      finish_stage("sft", {{"samples", ids.size()}, {"steps", r.steps}, {"first_loss", r.first_loss},
                           {"final_loss", r.last_loss}});
    });
  }

  // Reference policy for both RL stages: the post-SFT (or initial) params.
  const PolicyParams ref = params;

  if (run_pre) {
    guarded("pre", [&] {
      std::vector<TaskGroup> groups;
      std::size_t used = 0;
      for (const auto& g : principle_groups(corpus)) {
        if (used + g.member_ids.size() > static_cast<std::size_t>(cfg.pre.size)) break;
        TaskGroup tg;
        for (const auto& id : g.member_ids) tg.push_back({id, &ctx.task(id)});
        used += tg.size();
        groups.push_back(std::move(tg));
      }
      if (groups.empty()) throw ValidationError("pre-aligned stage: corpus has no principle groups within pre.size");
      Optimizer opt(rl.optimizer);
      JsonLinesWriter metrics, rewards;
      metrics.open(out / "pre_metrics.jsonl");
      rewards.open(out / "rewards.jsonl");
      StageSinks sinks{&metrics, &rewards, [&](int step, const PolicyParams& p) {
                         const fs::path ck = out / "checkpoints" / ("pre_step" + std::to_string(step) + ".json");
                         save_checkpoint(ctx, ck, p);
                         last_checkpoint = ck.generic_string();
                       }};
      const std::string parent = last_checkpoint;
      const auto rep = train_stage(policy, params, ref, groups, rl, cfg.pre.steps, derive_seed(cfg.seed, "pre"), opt,
                                   sinks);
      last_checkpoint = parent;
      finish_stage("pre", {{"groups", groups.size()}, {"problems", used}, {"steps", cfg.pre.steps},
                           {"initial_mean_reward", rep.initial_mean_reward},
                           {"final_mean_reward", rep.final_mean_reward}});
    });
  }

  if (run_dyn) {
    guarded("dyn", [&] {
      std::vector<DifficultyLattice> lattices;
      for (const auto& l : corpus.lattices()) {
        if ((lattices.size() + 1) * lattice_keys().size() > static_cast<std::size_t>(cfg.dyn.size)) break;
        lattices.push_back(l);
      }
      if (lattices.empty()) throw ValidationError("dynamic stage: corpus has no lattices within dyn.size");
      const std::uint64_t dyn_seed = derive_seed(cfg.seed, "dyn");
      TrainStageConfig inc_cfg = rl;
      inc_cfg.aggregation = Aggregation::none;
      inc_cfg.checkpoint_every = 0;
      Optimizer opt(inc_cfg.optimizer);
      Optimizer sft_opt({parse_optimizer(cfg.sft.optimizer), cfg.sft.lr});
      JsonLinesWriter metrics;
      metrics.open(out / "dyn_metrics.jsonl");
      SchedulerConfig sched{cfg.dyn.pass_threshold, cfg.dyn.max_reattempts, cfg.dyn.increment_steps,
                            cfg.dyn.lattice_batch};
      SampleOptions probe = rl.sampling;
      int increments = 0;

      const NodeEvaluator evaluate = [&](const CurriculumNode& node, int attempt) {
        const std::uint64_t s =
            derive_seed(derive_seed(derive_seed(dyn_seed, node.lattice_id), node.key), static_cast<std::uint64_t>(attempt));
        const auto& task = ctx.task(node.problem_id);
        std::vector<double> r;
        for (const auto& c : policy.sample(params, task, probe, s)) r.push_back(score(c, task.correct_answer, rl.reward));
        return evaluate_rewards(std::move(r), rl.reward.correct_value, sched.pass_threshold);
      };
      const IncrementTrainer train = [&](const IncrementSet& inc, int steps) {
        const int index = increments++;
        const std::uint64_t s = derive_seed(derive_seed(dyn_seed, "increment"), static_cast<std::uint64_t>(index));
        if (steps == 0) return;
        if (cfg.dyn.increment_mode == "sft") {
          const auto r = run_sft(ctx, params, inc.member_ids, steps, sft_opt, s, nullptr);
          metrics.write({{"increment", index}, {"target", inc.target_problem}, {"steps", r.steps},
                         {"loss", r.last_loss}});
          return;
        }
        std::vector<TaskGroup> groups;
        for (const auto& id : inc.member_ids) groups.push_back({{id, &ctx.task(id)}});
        const auto rep = train_stage(policy, params, ref, groups, inc_cfg, steps, s, opt);
        for (const auto& m : rep.steps) {
          json row = m.to_json();
          row["increment"] = index;
          row["target"] = inc.target_problem;
          metrics.write(row);
        }
      };
      const auto trace = run_curriculum(lattices, corpus, evaluate, train, sched);
      write_text_file(out / "dyn_trace.jsonl", trace.to_jsonl());

      json by_axis = json::object();
      for (const auto& [axis, n] : trace.increments_by_axis) by_axis[std::string(1, axis)] = n;
      std::map<std::string, int> status;
      for (const auto& [lat, nodes] : trace.nodes) {
        for (const auto& n : nodes) ++status[std::string(to_string(n.status))];
      }
      finish_stage("dyn", {{"lattices", lattices.size()}, {"events", trace.events.size()},
                           {"increments_by_axis", by_axis}, {"data_gaps", trace.data_gaps.size()},
                           {"node_status", status}});
    });
  }

  write_text_file(out / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

inline RunManifest run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const auto store = load_hierarchy(cfg.hierarchy, {});
  const Corpus corpus = ingest_corpus(cfg.corpus, store);
  return run_pipeline(cfg, corpus);
}

inline RunManifest run_pipeline(const std::filesystem::path& config_path) {
  return run_pipeline(load_config(config_path));
}

// ---------------------------------------------------------------------------
// Report emission

/// Standalone SVG line chart of `ys` against step index.
inline std::string svg_curve(const std::string& title, const std::vector<double>& ys) {
  const double w = 640, h = 360, left = 60, right = 20, top = 40, bottom = 40;
  double lo = 0.0, hi = 1.0;
  if (!ys.empty()) {
    lo = *std::min_element(ys.begin(), ys.end());
    hi = *std::max_element(ys.begin(), ys.end());
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };
  const auto px = [&](std::size_t i) {
    const double n = ys.size() > 1 ? static_cast<double>(ys.size() - 1) : 1.0;
    return left + (w - left - right) * static_cast<double>(i) / n;
  };
  const auto py = [&](double y) { return top + (h - top - bottom) * (hi - y) / (hi - lo); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
  s += "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + title +
       "</text>\n";
  s += "<line x1=\"60\" y1=\"320\" x2=\"620\" y2=\"320\" stroke=\"black\"/>\n";
  s += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"320\" stroke=\"black\"/>\n";
  s += "<text x=\"55\" y=\"44\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(hi) + "</text>\n";
  s += "<text x=\"55\" y=\"320\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(lo) +
       "</text>\n";
  s += "<text x=\"620\" y=\"335\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">step " +
       std::to_string(ys.empty() ? 0 : ys.size() - 1) + "</text>\n";
  s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) s += (i ? " " : "") + fmt(px(i)) + "," + fmt(py(ys[i]));
  s += "\"/>\n</svg>\n";
  return s;
}

struct TraceSummary {
  std::map<std::string, int> increments;  // axis -> count
  std::map<std::string, int> gaps;        // axis -> data gaps
  std::map<std::string, int> events;      // event type -> count
};

inline TraceSummary summarize_trace(const std::vector<TraceEvent>& events) {
  TraceSummary t;
  for (const auto& e : events) {
    ++t.events[std::string(to_string(e.event))];
    if (e.event != EventType::increment) continue;
    if (e.detail.rfind("axis=", 0) == 0) {
      ++t.increments[e.detail.substr(5, 1)];
    } else if (const auto pos = e.detail.rfind("axis "); pos != std::string::npos) {
      ++t.gaps[e.detail.substr(pos + 5, 1)];
    }
  }
  return t;
}

inline std::string trace_table(const TraceSummary& t) {
  std::string s = "axis | increments | data gaps\n-----+------------+----------\n";
  char buf[64];
  for (const char* axis : {"s", "v", "c"}) {
    const auto get = [&](const std::map<std::string, int>& m) {
      auto it = m.find(axis);
      return it == m.end() ? 0 : it->second;
    };
    std::snprintf(buf, sizeof buf, "%-4s | %10d | %9d\n", axis, get(t.increments), get(t.gaps));
    s += buf;
  }
  s += "events:";
  for (const auto& [k, v] : t.events) s += " " + k + "=" + std::to_string(v);
  return s + "\n";
}

/// Writes report.txt plus SVG curves for every stage metrics log found in
/// `run_dir`. Returns the written files.
inline std::vector<std::filesystem::path> emit_report(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(run_dir) || fs::is_empty(run_dir)) {
    throw ValidationError("report: run directory '" + run_dir.string() + "' is missing or empty");
  }
  std::vector<fs::path> written;
  std::string text = "Run report: " + run_dir.generic_string() + "\n";
  bool any = false;

  if (fs::exists(run_dir / "manifest.json")) {
    const auto m = read_json_file(run_dir / "manifest.json");
    text += "\n== Stages ==\n";
    for (const auto& [stage, summary] : m.at("stages").items()) text += stage + ": " + summary.dump() + "\n";
  }

  for (const char* stage : {"sft", "pre", "dyn"}) {
    const fs::path log = run_dir / (std::string(stage) + "_metrics.jsonl");
    if (!fs::exists(log)) continue;
    any = true;
    std::map<std::string, std::vector<double>> series;
    for (const auto& row : read_json_lines(log)) {
      for (const char* key : {"mean_reward", "kl", "loss"}) {
        if (row.contains(key)) series[key].push_back(row.at(key).get<double>());
      }
    }
    text += "\n== " + std::string(stage) + " metrics ==\n";
    for (const auto& [key, ys] : series) {
      if (ys.empty()) continue;
      const fs::path svg = run_dir / (std::string(stage) + "_" + key + ".svg");
      write_text_file(svg, svg_curve(std::string(stage) + " " + key, ys));
      written.push_back(svg);
      char buf[128];
      std::snprintf(buf, sizeof buf, "%-12s first=%.4f last=%.4f n=%zu\n", key.c_str(), ys.front(), ys.back(),
                    ys.size());
      text += buf;
    }
  }

  if (fs::exists(run_dir / "dyn_trace.jsonl")) {
    any = true;
    std::vector<TraceEvent> events;
    for (const auto& row : read_json_lines(run_dir / "dyn_trace.jsonl")) events.push_back(TraceEvent::from_json(row));
    text += "\n== Curriculum trace ==\n" + trace_table(summarize_trace(events));
  }

  if (fs::exists(run_dir / "eval_report.json")) {
    any = true;
    text += "\n== Evaluation ==\n" + EvalReport::from_json(read_json_file(run_dir / "eval_report.json")).to_table();
  }

  if (!any) throw ValidationError("report: no metrics, trace or eval logs in '" + run_dir.string() + "'");
  write_text_file(run_dir / "report.txt", text);
  written.insert(written.begin(), run_dir / "report.txt");
  return written;
}

}  // namespace mathbook
