// Command-line entry point. Exit codes: 0 ok, 1 validation failure, 2 runtime abort.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "mathbook/mathbook.hpp"
#include "mathbook/synthetic_data.hpp"

namespace fs = std::filesystem;
using namespace mathbook;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitAbort = 2;

KnowledgeHierarchy load_kb(const std::string& path, std::optional<std::size_t> leaves = std::nullopt,
                           std::optional<std::size_t> principles = std::nullopt) {
  auto store = load_hierarchy(path, {leaves, principles});
  for (const auto& w : store.warnings()) std::cerr << "warning: " << w << "\n";
  return store;
}

int cmd_kb_validate(const std::string& path, std::optional<std::size_t> leaves,
                    std::optional<std::size_t> principles) {
  const auto store = load_kb(path, leaves, principles);
  std::cout << "ok: " << store.points().size() << " nodes, " << store.leaf_count() << " knowledge points, "
            << store.principle_count() << " principles\n";
  return 0;
}

int cmd_kb_cluster(const std::string& sim_path, std::size_t levels, const std::string& out) {
  const auto sim = SimilarityMatrix::from_json(read_json_file(sim_path));
  const auto result = cluster_tags(sim, levels);
  json doc = {{"tree", result.tree.to_json()}, {"clusters", result.clusters}};
  if (out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    write_text_file(out, doc.dump(2) + "\n");
    std::cout << "wrote " << result.clusters.size() << " clusters to " << out << "\n";
  }
  return 0;
}

int cmd_corpus_validate(const std::string& dir, const std::string& kb) {
  const auto store = load_kb(kb);
  const Corpus corpus = ingest_corpus(dir, store);
  int bad = 0;
  for (const auto& l : corpus.lattices()) {
    const auto rep = validate_lattice(l, corpus);
    if (!rep.passed()) {
      const auto* f = rep.first_failure();
      std::cerr << "lattice '" << l.seed_id << "': " << f->rule << " violated: " << f->detail << "\n";
      ++bad;
    }
  }
  if (bad != 0) return kExitValidation;
  std::cout << "ok: " << corpus.problems().size() << " problems, " << corpus.groups().size() << " groups, "
            << corpus.lattices().size() << " lattices\n";
  return 0;
}

int cmd_corpus_stats(const std::string& dir, const std::string& kb) {
  const auto store = load_kb(kb);
  const Corpus corpus = ingest_corpus(dir, store);
  std::cout << corpus.stats().to_json().dump(2) << "\n";
  return 0;
}

struct TrainArgs {
  std::string stage;
  std::string corpus;
  std::string config;
  std::string kb;
  std::optional<std::uint64_t> seed;
  std::string init;
  std::string out;
  std::string skip;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : parse_config(read_text_file(a.config));
  apply_env_overrides(cfg);
  if (!a.corpus.empty()) cfg.corpus = a.corpus;
  if (!a.kb.empty()) cfg.hierarchy = a.kb;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.init.empty()) cfg.init_checkpoint = a.init;
  if (!a.out.empty()) cfg.output_dir = a.out;
  std::string skip = a.skip;
  if (a.stage != "all") {
    for (const char* s : {"sft", "pre", "dyn"}) {
      if (a.stage != s) skip += std::string(skip.empty() ? "" : ",") + s;
    }
  }
  if (!skip.empty()) cfg.skip = cfg.skip.empty() ? skip : cfg.skip + "," + skip;
  const auto manifest = run_pipeline(cfg);
  std::cout << manifest.to_json().dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& items_path, const std::string& preds_path, const std::string& mode_name,
             const std::string& judge_url, const std::string& kb, const std::string& out) {
  const JudgeMode mode = parse_judge_mode(mode_name);
  std::optional<KnowledgeHierarchy> store;
  if (!kb.empty()) store = load_kb(kb);
  const auto items = load_eval_items(items_path, preds_path, store ? &*store : nullptr);
  std::unique_ptr<JudgeClient> client;
  if (mode == JudgeMode::external) {
    if (judge_url.empty()) throw ValidationError("external mode needs --judge host:port");
    const auto colon = judge_url.rfind(':');
    if (colon == std::string::npos) throw ValidationError("--judge must be host:port");
    client = std::make_unique<HttpJudgeClient>(judge_url.substr(0, colon), std::stoi(judge_url.substr(colon + 1)));
  }
  std::vector<Judgment> judgments;
  for (const auto& it : items) {
    judgments.push_back(judge(it, mode, client.get()));
    if (!judgments.back().judged) std::cerr << "warning: '" << it.problem_id << "' left unjudged\n";
  }
  const auto rep = report(items, judgments);
  std::cout << rep.to_table();
  if (!out.empty()) {
    write_text_file(fs::path(out) / "eval_report.json", rep.to_json().dump(2) + "\n");
    write_text_file(fs::path(out) / "eval_table.txt", rep.to_table());
  }
  return 0;
}

int cmd_report(const std::string& dir) {
  for (const auto& p : emit_report(dir)) std::cout << "wrote " << p.generic_string() << "\n";
  return 0;
}

/// Writes the synthetic demo data set used by the README walkthrough.
int cmd_data_generate(const std::string& out) {
  const fs::path root = out;
  const json kb = synth::hierarchy_json();
  write_text_file(root / "hierarchy.json", kb.dump(1) + "\n");
  const auto store = KnowledgeHierarchy::from_json(kb);
  synth::build_corpus(store).write(root / "corpus");
  std::string items, preds;
  for (const auto& it : synth::eval_items({62, 30, 8}, 7)) {
    items += json{{"problem_id", it.problem_id}, {"reasoning_steps", it.reasoning_steps}, {"domain", it.domain},
                  {"subdomain", it.subdomain}, {"question", it.question}, {"gold", it.gold}}
                 .dump() +
             "\n";
    preds += json{{"problem_id", it.problem_id}, {"prediction", it.prediction}}.dump() + "\n";
  }
  write_text_file(root / "eval" / "items.jsonl", items);
  write_text_file(root / "eval" / "preds.jsonl", preds);
  const auto [sim, blocks] = synth::planted_blocks({4, 3, 5}, 11);
  json sim_doc = {{"labels", sim.labels}, {"values", sim.values}};
  write_text_file(root / "similarity.json", sim_doc.dump() + "\n");
  std::cout << "wrote demo data under " << root.generic_string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mathbook: knowledge-system curation and curriculum RL toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  auto* kb = app.add_subcommand("kb", "knowledge hierarchy tools");
  kb->require_subcommand(1);
  std::string kb_path, sim_path, cluster_out;
  std::optional<std::size_t> expect_leaves, expect_principles;
  std::size_t levels = 0;
  auto* kb_validate = kb->add_subcommand("validate", "load and validate a hierarchy file");
  kb_validate->add_option("path", kb_path, "hierarchy JSON")->required();
  kb_validate->add_option("--expect-leaves", expect_leaves, "warn when the leaf count differs");
  kb_validate->add_option("--expect-principles", expect_principles, "warn when the principle count differs");
  kb_validate->callback([&] { rc = cmd_kb_validate(kb_path, expect_leaves, expect_principles); });
  auto* kb_cluster = kb->add_subcommand("cluster", "average-linkage clustering of tag similarities");
  kb_cluster->add_option("similarity", sim_path, "similarity matrix JSON {labels, values}")->required();
  kb_cluster->add_option("--levels", levels, "number of clusters to cut at")->required();
  kb_cluster->add_option("--out", cluster_out, "output JSON file");
  kb_cluster->callback([&] { rc = cmd_kb_cluster(sim_path, levels, cluster_out); });

  auto* corpus = app.add_subcommand("corpus", "problem corpus tools");
  corpus->require_subcommand(1);
  std::string corpus_dir, corpus_kb = "data/hierarchy.json";
  for (const char* name : {"validate", "stats"}) {
    auto* sub = corpus->add_subcommand(name, std::string(name) + " a corpus directory");
    sub->add_option("dir", corpus_dir, "corpus directory")->required();
    sub->add_option("--kb", corpus_kb, "hierarchy JSON");
    const std::string which = name;
    sub->callback([&, which] {
      rc = which == "validate" ? cmd_corpus_validate(corpus_dir, corpus_kb) : cmd_corpus_stats(corpus_dir, corpus_kb);
    });
  }

  auto* train = app.add_subcommand("train", "run training stages");
  train->require_subcommand(1);
  TrainArgs targs;
  for (const char* stage : {"sft", "pre", "dyn", "all"}) {
    auto* sub = train->add_subcommand(stage, std::string("run stage ") + stage);
    sub->add_option("--corpus", targs.corpus, "corpus directory");
    sub->add_option("--config", targs.config, "run config file");
    sub->add_option("--kb", targs.kb, "hierarchy JSON");
    sub->add_option("--seed", targs.seed, "master seed");
    sub->add_option("--init", targs.init, "initial checkpoint");
    sub->add_option("--out", targs.out, "output directory");
    sub->add_option("--skip", targs.skip, "comma-separated stages to skip");
    const std::string which = stage;
    sub->callback([&, which] {
      targs.stage = which;
      rc = cmd_train(targs);
    });
  }

  auto* eval = app.add_subcommand("eval", "evaluation harness");
  eval->require_subcommand(1);
  std::string items, preds, mode = "rule", judge_url, eval_kb, eval_out;
  auto* eval_run = eval->add_subcommand("run", "judge predictions and print the accuracy table");
  eval_run->add_option("--items", items, "items JSONL")->required();
  eval_run->add_option("--preds", preds, "predictions JSONL")->required();
  eval_run->add_option("--mode", mode, "rule or external");
  eval_run->add_option("--judge", judge_url, "external judge host:port");
  eval_run->add_option("--kb", eval_kb, "hierarchy JSON for subdomain checks");
  eval_run->add_option("--out", eval_out, "directory for eval_report.json");
  eval_run->callback([&] { rc = cmd_eval(items, preds, mode, judge_url, eval_kb, eval_out); });

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "render text tables and SVG curves for a run directory");
  rep->add_option("run_dir", run_dir, "run directory")->required();
  rep->callback([&] { rc = cmd_report(run_dir); });

  std::string data_out = "data";
  auto* data = app.add_subcommand("data", "demo data");
  data->require_subcommand(1);
  auto* gen = data->add_subcommand("generate", "write the synthetic demo data set");
  gen->add_option("--out", data_out, "output directory");
  gen->callback([&] { rc = cmd_data_generate(data_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeAbort& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kExitAbort;
  }
  return rc;
}
