#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <httplib.h>

#include "mathbook/canonical.hpp"
#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/knowledge_store.hpp"

namespace mathbook {

/// Top-level domains with their report column abbreviations, in column order.
inline const std::array<std::pair<std::string_view, std::string_view>, 4>& eval_domains() {
  static const std::array<std::pair<std::string_view, std::string_view>, 4> d = {{
      {"Fundamental Skills", "FS"},
      {"Probability and Statistics", "PS"},
      {"Geometry", "Geo"},
      {"Algebra", "Alg"},
  }};
  return d;
}

inline constexpr int kMinReasoningSteps = 1;
inline constexpr int kMaxReasoningSteps = 10;

/// Reasoning-depth level: 1-3 steps -> 1, 4-6 -> 2, 7-10 -> 3.
inline int level_of(int steps) {
  if (steps < kMinReasoningSteps || steps > kMaxReasoningSteps) {
    throw ValidationError("reasoning steps " + std::to_string(steps) + " out of [1,10]");
  }
  if (steps <= 3) return 1;
  if (steps <= 6) return 2;
  return 3;
}

struct EvalItem {
  std::string problem_id;
  int reasoning_steps = 1;
  std::string domain;
  std::string subdomain;
  std::string question;
  std::string prediction;
  std::string gold;
};

/// Domain must be one of the four report domains; with a store, the
/// subdomain must also be a level-2 child of that domain.
inline void validate_item(const EvalItem& item, const KnowledgeHierarchy* store = nullptr) {
  const std::string where = "eval item '" + item.problem_id + "'";
  level_of(item.reasoning_steps);
  if (item.gold.empty()) throw ValidationError(where + ": empty gold answer");
  bool known = false;
  for (const auto& [name, abbr] : eval_domains()) known = known || name == item.domain;
  if (!known) throw ValidationError(where + ": unknown domain '" + item.domain + "'");
  if (store == nullptr) return;
  bool found = false;
  for (const auto& p : store->points()) {
    if (p.level != 2 || p.name != item.subdomain || !p.parent_id) continue;
    const auto* parent = store->find_point(*p.parent_id);
    if (parent != nullptr && parent->name == item.domain) found = true;
  }
  if (!found) {
    throw ValidationError(where + ": subdomain '" + item.subdomain + "' is not under domain '" + item.domain + "'");
  }
}

// ---------------------------------------------------------------------------
// Judging

enum class JudgeMode { rule, external };

inline JudgeMode parse_judge_mode(std::string_view s) {
  if (s == "rule") return JudgeMode::rule;
  if (s == "external") return JudgeMode::external;
  throw ValidationError("unknown judge mode '" + std::string(s) + "'");
}

/// Evaluation prompt sent verbatim (with the question substituted) to an
/// external judge.
inline constexpr std::string_view kEvaluationPromptTemplate =
    "Now, we require you to solve a math question. Please briefly describe your thought process \n"
    "and provide the final answer. \n"
    "For multiple-choice questions, return the selected option and its content. For direct answer \n"
    "selection, return only the chosen result. For fill-in-the-blank questions, answer directly. \n"
    "Question: <Question>\n"
    "Regarding the format, please answer following the template below, and be sure to include \n"
    "two <> symbols: \n"
    "<Thought process>: <<your thought process>> \n"
    "<Answer>: <<your answer>> \n";

inline std::string render_evaluation_prompt(std::string_view question) {
  std::string prompt(kEvaluationPromptTemplate);
  const std::string_view slot = "<Question>";
  const auto pos = prompt.find(slot);
  prompt.replace(pos, slot.size(), question);
  return prompt;
}

struct JudgeRequest {
  std::string problem_id;
  std::string prompt;
  std::string prediction;
  std::string gold;

  json to_json() const {
    return {{"problem_id", problem_id}, {"prompt", prompt}, {"prediction", prediction}, {"gold", gold}};
  }
};

/// Transport to an external judge. nullopt means the call failed.
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::optional<bool> judge(const JudgeRequest& request) = 0;
};

/// POSTs the request JSON and expects {"correct": bool} back.
class HttpJudgeClient final : public JudgeClient {
 public:
  HttpJudgeClient(std::string host, int port, std::string path = "/judge", int timeout_sec = 10)
      : client_(std::move(host), port), path_(std::move(path)) {
    client_.set_connection_timeout(timeout_sec, 0);
    client_.set_read_timeout(timeout_sec, 0);
  }

  std::optional<bool> judge(const JudgeRequest& request) override {
    auto res = client_.Post(path_, request.to_json().dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;
    try {
      const auto body = json::parse(res->body);
      if (!body.contains("correct") || !body.at("correct").is_boolean()) return std::nullopt;
      return body.at("correct").get<bool>();
    } catch (const json::exception&) {
      return std::nullopt;
    }
  }

 private:
  httplib::Client client_;
  std::string path_;
};

struct Judgment {
  bool judged = false;
  bool correct = false;
};

inline constexpr int kJudgeRetries = 2;

/// Rule mode: canonical exact match. External mode: one call plus up to two
/// retries, then the item is left unjudged.
inline Judgment judge(const EvalItem& item, JudgeMode mode, JudgeClient* client = nullptr) {
  if (item.gold.empty()) throw ValidationError("judge: empty gold for '" + item.problem_id + "'");
  if (mode == JudgeMode::rule) return {true, answers_match(item.prediction, item.gold)};
  if (client == nullptr) return {false, false};
  const JudgeRequest req{item.problem_id, render_evaluation_prompt(item.question), item.prediction, item.gold};
  for (int attempt = 0; attempt <= kJudgeRetries; ++attempt) {
    if (auto verdict = client->judge(req)) return {true, *verdict};
  }
  return {false, false};
}

inline bool judge(std::string_view prediction, std::string_view gold) {
  if (gold.empty()) throw ValidationError("judge: empty gold");
  return answers_match(prediction, gold);
}

// ---------------------------------------------------------------------------
// Report

struct CellStats {
  std::size_t total = 0;
  std::size_t correct = 0;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalReport {
  CellStats overall;
  std::map<int, CellStats> per_level;
  std::map<std::string, CellStats> per_domain;
  std::map<std::string, CellStats> per_subdomain;
  std::size_t unjudged = 0;

  double accuracy() const { return overall.accuracy(); }

  json to_json() const {
    const auto cell = [](const CellStats& c) {
      return json{{"total", c.total}, {"correct", c.correct}, {"accuracy", c.accuracy()}};
    };
    json levels = json::object(), domains = json::object(), subs = json::object();
    for (const auto& [l, c] : per_level) levels["level" + std::to_string(l)] = cell(c);
    for (const auto& [d, c] : per_domain) domains[d] = cell(c);
    for (const auto& [d, c] : per_subdomain) subs[d] = cell(c);
    return {{"overall", cell(overall)}, {"levels", levels}, {"domains", domains},
            {"subdomains", subs}, {"unjudged", unjudged}};
  }

  static EvalReport from_json(const json& j) {
    const auto cell = [](const json& c) {
      return CellStats{c.at("total").get<std::size_t>(), c.at("correct").get<std::size_t>()};
    };
    EvalReport r;
    r.overall = cell(j.at("overall"));
    for (const auto& [k, v] : j.at("levels").items()) r.per_level[std::stoi(k.substr(5))] = cell(v);
    for (const auto& [k, v] : j.at("domains").items()) r.per_domain[k] = cell(v);
    if (j.contains("subdomains")) {
      for (const auto& [k, v] : j.at("subdomains").items()) r.per_subdomain[k] = cell(v);
    }
    r.unjudged = j.value("unjudged", std::size_t{0});
    return r;
  }

  /// Plain-text table: overall accuracy, the three reasoning levels and the
  /// four knowledge domains.
  std::string to_table(std::string_view model = "model") const {
    const auto pct = [](const CellStats* c) {
      if (c == nullptr || c->total == 0) return std::string("-");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", 100.0 * c->accuracy());
      return std::string(buf);
    };
    const auto pad = [](std::string s, std::size_t w) {
      if (s.size() < w) s.insert(0, w - s.size(), ' ');
      return s;
    };
    std::string header = pad("Model", 16) + " |" + pad("Acc.", 7) + " |";
    std::string row = pad(std::string(model), 16) + " |" + pad(pct(&overall), 7) + " |";
    for (int l = 1; l <= 3; ++l) {
      header += pad("Level" + std::to_string(l), 7);
      auto it = per_level.find(l);
      row += pad(pct(it == per_level.end() ? nullptr : &it->second), 7);
    }
    header += " |";
    row += " |";
    for (const auto& [name, abbr] : eval_domains()) {
      header += pad(std::string(abbr), 7);
      auto it = per_domain.find(std::string(name));
      row += pad(pct(it == per_domain.end() ? nullptr : &it->second), 7);
    }
    std::string rule(header.size(), '-');
    return header + "\n" + rule + "\n" + row + "\n";
  }
};

/// Judged items only; unjudged items are counted separately.
inline EvalReport report(std::span<const EvalItem> items, std::span<const Judgment> judgments) {
  if (items.size() != judgments.size()) throw ValidationError("report: items and judgments differ in length");
  EvalReport r;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!judgments[i].judged) {
      ++r.unjudged;
      continue;
    }
    const auto& item = items[i];
    const std::size_t hit = judgments[i].correct ? 1 : 0;
    for (CellStats* c : {&r.overall, &r.per_level[level_of(item.reasoning_steps)], &r.per_domain[item.domain],
                         &r.per_subdomain[item.subdomain]}) {
      ++c->total;
      c->correct += hit;
    }
  }
  if (r.overall.total == 0) throw ValidationError("report: no judged items");
  return r;
}

/// Items file rows {problem_id, reasoning_steps, domain, subdomain, gold,
/// question?}; predictions rows {problem_id, prediction}. Items without a
/// prediction get an empty one.
inline std::vector<EvalItem> load_eval_items(const std::filesystem::path& items_path,
                                             const std::filesystem::path& preds_path,
                                             const KnowledgeHierarchy* store = nullptr) {
  std::unordered_map<std::string, std::string> preds;
  for (const auto& row : read_json_lines(preds_path)) {
    preds[require_field<std::string>(row, "problem_id", "prediction")] =
        require_field<std::string>(row, "prediction", "prediction");
  }
  std::vector<EvalItem> items;
  for (const auto& row : read_json_lines(items_path)) {
    EvalItem it;
    it.problem_id = require_field<std::string>(row, "problem_id", "eval item");
    const std::string where = "eval item '" + it.problem_id + "'";
    it.reasoning_steps = require_field<int>(row, "reasoning_steps", where);
    it.domain = require_field<std::string>(row, "domain", where);
    it.subdomain = require_field<std::string>(row, "subdomain", where);
    it.gold = require_field<std::string>(row, "gold", where);
    it.question = row.value("question", std::string{});
    if (auto p = preds.find(it.problem_id); p != preds.end()) it.prediction = p->second;
    validate_item(it, store);
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace mathbook
