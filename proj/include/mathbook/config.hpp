#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"

// Run configuration in a small TOML subset: [section] / [section.sub]
// headers, `key = value` lines, # comments. Values are quoted strings,
// integers, floats or true/false. Any key can be overridden from the
// environment as MATHBOOK_<SECTION>_<KEY> (dots to underscores, upper case).

namespace mathbook {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string hierarchy = "data/hierarchy.json";
  std::string corpus = "data/corpus";
  std::string init_checkpoint;
  std::string skip;  // comma-separated stage names

  struct Policy {
    int embed = 8;
    int hidden = 24;
    int positions = 8;
    double init_scale = 0.1;
  } policy;

  struct Task {
    int symbols = 9;
    int feature_dim = 16;
    int base_steps = 1;
    double visual_noise = 0.5;
    int context_distractors = 3;
  } task;

  struct Sft {
    double lr = 1e-5;
    int epochs = 1;
    double warmup_ratio = 0.1;
    std::string optimizer = "adam";
    int batch_size = 8;
    int size = 1000;
  } sft;

  struct Rl {
    double lr = 1e-6;
    double temperature = 1.0;
    int group_size = 8;
    int max_len = 1024;
    std::string optimizer = "sgd";
    double epsilon = 0.2;
    double beta = 0.04;
    std::string kl_estimator = "k3";
    double advantage_epsilon = 1e-8;
    int updates_per_batch = 1;
    int eval_rollouts = 32;
    double reward_correct = 0.9;
    double reward_format = 0.1;
    std::string reward_mode = "piecewise";
  } rl;

  struct Pre {
    int size = 5800;
    int steps = 200;
    std::string aggregation = "rankwise";
    int checkpoint_every = 0;
  } pre;

  struct Dyn {
    int size = 4000;
    double pass_threshold = 0.5;
    int max_reattempts = 2;
    int increment_steps = 20;
    int lattice_batch = 1;
    std::string increment_mode = "grpo";
  } dyn;

  /// Calls f(key, field) for every field in canonical order.
  template <class Self, class F>
  static void visit(Self& c, F&& f) {
    f("seed", c.seed);
    f("output_dir", c.output_dir);
    f("hierarchy", c.hierarchy);
    f("corpus", c.corpus);
    f("init_checkpoint", c.init_checkpoint);
    f("skip", c.skip);
    f("policy.embed", c.policy.embed);
    f("policy.hidden", c.policy.hidden);
    f("policy.positions", c.policy.positions);
    f("policy.init_scale", c.policy.init_scale);
    f("task.symbols", c.task.symbols);
    f("task.feature_dim", c.task.feature_dim);
    f("task.base_steps", c.task.base_steps);
    f("task.visual_noise", c.task.visual_noise);
    f("task.context_distractors", c.task.context_distractors);
    f("sft.lr", c.sft.lr);
    f("sft.epochs", c.sft.epochs);
    f("sft.warmup_ratio", c.sft.warmup_ratio);
    f("sft.optimizer", c.sft.optimizer);
    f("sft.batch_size", c.sft.batch_size);
    f("sft.size", c.sft.size);
    f("rl.lr", c.rl.lr);
    f("rl.temperature", c.rl.temperature);
    f("rl.group_size", c.rl.group_size);
    f("rl.max_len", c.rl.max_len);
    f("rl.optimizer", c.rl.optimizer);
    f("rl.epsilon", c.rl.epsilon);
    f("rl.beta", c.rl.beta);
    f("rl.kl_estimator", c.rl.kl_estimator);
    f("rl.advantage_epsilon", c.rl.advantage_epsilon);
    f("rl.updates_per_batch", c.rl.updates_per_batch);
    f("rl.eval_rollouts", c.rl.eval_rollouts);
    f("rl.reward.correct", c.rl.reward_correct);
    f("rl.reward.format", c.rl.reward_format);
    f("rl.reward.mode", c.rl.reward_mode);
    f("pre.size", c.pre.size);
    f("pre.steps", c.pre.steps);
    f("pre.aggregation", c.pre.aggregation);
    f("pre.checkpoint_every", c.pre.checkpoint_every);
    f("dyn.size", c.dyn.size);
    f("dyn.pass_threshold", c.dyn.pass_threshold);
    f("dyn.max_reattempts", c.dyn.max_reattempts);
    f("dyn.increment_steps", c.dyn.increment_steps);
    f("dyn.lattice_batch", c.dyn.lattice_batch);
    f("dyn.increment_mode", c.dyn.increment_mode);
  }

  std::set<std::string> skipped_stages() const {
    std::set<std::string> out;
    std::size_t start = 0;
    while (start <= skip.size()) {
      auto end = skip.find(',', start);
      if (end == std::string::npos) end = skip.size();
      std::string name = skip.substr(start, end - start);
      name.erase(0, name.find_first_not_of(" \t"));
      name.erase(name.find_last_not_of(" \t") + 1);
      if (!name.empty()) out.insert(name);
      start = end + 1;
    }
    return out;
  }

  void validate() const {
    const auto positive = [](bool ok, const char* what) {
      if (!ok) throw ValidationError(std::string("config: ") + what);
    };
    positive(sft.lr > 0 && rl.lr > 0, "learning rates must be > 0");
    positive(sft.epochs >= 1 && sft.batch_size >= 1, "sft.epochs and sft.batch_size must be >= 1");
    positive(sft.warmup_ratio >= 0 && sft.warmup_ratio < 1, "sft.warmup_ratio must be in [0,1)");
    positive(sft.size >= 1 && pre.size >= 1 && dyn.size >= 1, "data sizes must be >= 1");
    positive(rl.temperature > 0, "rl.temperature must be > 0");
    positive(rl.group_size >= 2, "rl.group_size must be >= 2");
    positive(rl.max_len >= 1, "rl.max_len must be >= 1");
    positive(rl.updates_per_batch >= 1 && rl.eval_rollouts >= 1, "rl update and eval counts must be >= 1");
    positive(pre.steps >= 0 && pre.checkpoint_every >= 0, "pre.steps must be >= 0");
    positive(policy.init_scale >= 0, "policy.init_scale must be >= 0");
    for (const auto& s : skipped_stages()) {
      positive(s == "sft" || s == "pre" || s == "dyn", "skip lists unknown stage");
    }
    positive(dyn.increment_mode == "grpo" || dyn.increment_mode == "sft", "dyn.increment_mode must be grpo or sft");
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

/// Strips an inline comment that is outside a quoted string.
inline std::string strip_comment(std::string_view line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_str) {
      ++i;
    } else if (line[i] == '"') {
      in_str = !in_str;
    } else if (line[i] == '#' && !in_str) {
      return std::string(line.substr(0, i));
    }
  }
  return std::string(line);
}

struct Assign {
  const std::string& key;
  const std::string& raw;
  bool quoted;

  void operator()(std::string& dst) const {
    if (!quoted) throw ValidationError("config: " + key + " expects a quoted string");
    dst = raw;
  }
  void operator()(double& dst) const {
    if (quoted) throw ValidationError("config: " + key + " expects a number");
    const char* b = raw.data();
    const char* e = b + raw.size();
    auto [p, ec] = std::from_chars(b, e, dst);
    if (ec != std::errc{} || p != e) throw ValidationError("config: " + key + ": bad number '" + raw + "'");
  }
  void operator()(int& dst) const { integral(dst); }
  void operator()(std::uint64_t& dst) const { integral(dst); }

  template <class T>
  void integral(T& dst) const {
    if (quoted) throw ValidationError("config: " + key + " expects an integer");
    const char* b = raw.data();
    const char* e = b + raw.size();
    auto [p, ec] = std::from_chars(b, e, dst);
    if (ec != std::errc{} || p != e) throw ValidationError("config: " + key + ": bad integer '" + raw + "'");
  }
};

inline std::pair<std::string, bool> parse_value(const std::string& text, const std::string& where) {
  if (text.empty()) throw ValidationError(where + ": missing value");
  if (text.front() != '"') return {text, false};
  std::string out;
  std::size_t i = 1;
  for (; i < text.size() && text[i] != '"'; ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) ++i;
    out += text[i];
  }
  if (i >= text.size() || i + 1 != text.size()) throw ValidationError(where + ": unterminated string");
  return {out, true};
}

}  // namespace config_detail

/// Key-value pairs of a config text, keyed by dotted path.
inline std::map<std::string, std::pair<std::string, bool>> parse_config_entries(std::string_view text) {
  std::map<std::string, std::pair<std::string, bool>> out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = config_detail::trim(config_detail::strip_comment(text.substr(pos, nl - pos)));
    pos = nl + 1;
    ++line_no;
    const std::string where = "config line " + std::to_string(line_no);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + ": malformed section header");
      section = config_detail::trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ValidationError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const std::string key = config_detail::trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ValidationError(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full) != 0) throw ValidationError(where + ": duplicate key '" + full + "'");
    out[full] = config_detail::parse_value(config_detail::trim(std::string_view(line).substr(eq + 1)), where);
  }
  return out;
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  auto entries = parse_config_entries(text);
  RunConfig::visit(base, [&](const std::string& key, auto& field) {
    auto it = entries.find(key);
    if (it == entries.end()) return;
    config_detail::Assign{key, it->second.first, it->second.second}(field);
    entries.erase(it);
  });
  if (!entries.empty()) throw ValidationError("config: unknown key '" + entries.begin()->first + "'");
  return base;
}

inline std::string env_name(std::string_view key) {
  std::string out = "MATHBOOK_";
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

using EnvLookup = std::function<const char*(const char*)>;

/// Environment values are raw text: strings unquoted, numbers as written.
inline void apply_env_overrides(RunConfig& cfg, const EnvLookup& lookup = [](const char* n) { return std::getenv(n); }) {
  RunConfig::visit(cfg, [&](const std::string& key, auto& field) {
    const char* v = lookup(env_name(key).c_str());
    if (v == nullptr) return;
    using T = std::decay_t<decltype(field)>;
    config_detail::Assign{key, std::string(v), std::is_same_v<T, std::string>}(field);
  });
}

/// Canonical text: every key, in fixed order, grouped by section.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string current = "";
  RunConfig::visit(cfg, [&](const std::string& key, const auto& field) {
    const auto dot = key.rfind('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section != current) {
      out += "\n[" + section + "]\n";
      current = section;
    }
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, std::string>) {
      out += name + " = " + config_detail::quote(field) + "\n";
    } else if constexpr (std::is_same_v<T, double>) {
      out += name + " = " + config_detail::format_double(field) + "\n";
    } else {
      out += name + " = " + std::to_string(field) + "\n";
    }
  });
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path, const EnvLookup& lookup = [](const char* n) {
  return std::getenv(n);
}) {
  RunConfig cfg = parse_config(read_text_file(path));
  apply_env_overrides(cfg, lookup);
  cfg.validate();
  return cfg;
}

}  // namespace mathbook
